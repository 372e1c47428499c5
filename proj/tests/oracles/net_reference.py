"""Independent float64 numpy forward passes for the encoder and detail nets.

Reads NNW1 weight files and P6 images written by the C++ side and prints the
values frozen in tests/test_network.cpp. Usage:
    net_reference.py enc.nnw det.nnw scene64.ppm scene16.ppm low64.ppm
"""
import struct
import sys
import zlib

import numpy as np

RANGES = [(0.5, 2.0)] * 3 + [(0.3, 3.0), (0.0, 1.0), (0.0, 5.0)]


def read_nnw(path):
    raw = open(path, "rb").read()
    assert raw[:4] == b"NNW1"
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    assert zlib.crc32(body) & 0xFFFFFFFF == crc, "crc mismatch"
    (count,) = struct.unpack_from("<I", body, 4)
    off, out = 8, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + n].decode()
        off += n
        rank = body[off]
        off += 1
        dims = struct.unpack_from("<%dI" % rank, body, off)
        off += 4 * rank
        cnt = int(np.prod(dims))
        out[name] = np.frombuffer(body, "<f4", cnt, off).astype(np.float64).reshape(dims)
        off += 4 * cnt
    assert off == len(body)
    return out, crc


def read_ppm(path):
    raw = open(path, "rb").read()
    parts = raw.split(maxsplit=4)
    assert parts[0] == b"P6"
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(raw[-w * h * 3:], np.uint8).astype(np.float64) / 255.0
    return data.reshape(h, w, 3)


def conv(x, w, b):
    c, h, wd = x.shape
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[0], h, wd))
    for ky in range(3):
        for kx in range(3):
            out += np.einsum("oc,chw->ohw", w[:, :, ky, kx], p[:, ky:ky + h, kx:kx + wd])
    return out + b[:, None, None]


def pool(x):
    c, h, w = x.shape
    oh, ow = (h - 3) // 2 + 1, (w - 3) // 2 + 1
    out = np.full((c, oh, ow), -np.inf)
    for ky in range(3):
        for kx in range(3):
            out = np.maximum(out, x[:, ky:ky + 2 * oh - 1:2, kx:kx + 2 * ow - 1:2])
    return out


def encoder(img, w):
    x = img.transpose(2, 0, 1)
    for i in range(1, 6):
        x = pool(np.maximum(conv(x, w[f"encoder.conv{i}.weight"], w[f"encoder.conv{i}.bias"]), 0))
    v = x.reshape(x.shape[0], -1).max(axis=1)
    raw = w["encoder.fc.weight"] @ v + w["encoder.fc.bias"]
    s = 1 / (1 + np.exp(-raw))
    return np.array([lo + si * (hi - lo) for si, (lo, hi) in zip(s, RANGES)])


def conv_bn_relu(x, w, conv_name, bn):
    y = conv(x, w[conv_name + ".weight"], w[conv_name + ".bias"])
    g, be, m, v = (w[bn + s][:, None, None] for s in (".gamma", ".beta", ".mean", ".var"))
    return np.maximum(g * (y - m) / np.sqrt(v + 1e-5) + be, 0)


def detail(img, w):
    x = conv_bn_relu(img.transpose(2, 0, 1), w, "detail.conv_in", "detail.bn_in")
    for b in range(1, 4):
        p = f"detail.block{b}"
        y = conv_bn_relu(x, w, p + ".conv1", p + ".bn1")
        y = conv_bn_relu(y, w, p + ".conv2", p + ".bn2")
        x = y + x
    out = np.tanh(conv(x, w["detail.conv_out.weight"], w["detail.conv_out.bias"]))
    return out.transpose(1, 2, 0)


if __name__ == "__main__":
    sys.path.insert(0, __file__.rsplit("/", 1)[0])
    from isp_reference import pipeline

    enc, enc_crc = read_nnw(sys.argv[1])
    det, det_crc = read_nnw(sys.argv[2])
    print(f"crc enc {enc_crc:#010x} det {det_crc:#010x}")
    p = encoder(read_ppm(sys.argv[3]), enc)
    print("encoder params:", ", ".join(f"{v:.17g}" for v in p))
    r = detail(read_ppm(sys.argv[4]), det)
    print(f"detail sum {r.sum():.17g} sumsq {(r**2).sum():.17g} maxabs {np.abs(r).max():.17g}")
    for (y, x, c) in [(0, 0, 0), (3, 7, 1), (8, 8, 2), (15, 15, 0), (15, 0, 1)]:
        print(f"detail[{y},{x},{c}] = {r[y, x, c]:.17g}")
    low = read_ppm(sys.argv[5])
    pl = encoder(low, enc)
    out = np.clip(pipeline(low, tuple(pl)) + detail(low, det), 0, 1)
    lum = lambda a: (a @ np.array([0.27, 0.67, 0.06])).mean()
    print("enhance params:", ", ".join(f"{v:.17g}" for v in pl))
    print(f"enhance mean {out.mean():.17g} in-lum {lum(low):.17g} out-lum {lum(out):.17g}")
    for (y, x, c) in [(0, 0, 0), (10, 20, 1), (32, 32, 2), (63, 63, 0)]:
        print(f"enhance[{y},{x},{c}] = {out[y, x, c]:.17g}")
