#pragma once

#include "lumafuse/clip_losses.hpp"
#include "lumafuse/errors.hpp"
#include "lumafuse/image.hpp"
#include "lumafuse/isp.hpp"
#include "lumafuse/latency.hpp"
#include "lumafuse/metrics.hpp"
#include "lumafuse/network.hpp"
#include "lumafuse/optimizer.hpp"
#include "lumafuse/random.hpp"
#include "lumafuse/service.hpp"
#include "lumafuse/synthetic.hpp"
#include "lumafuse/tensor.hpp"
#include "lumafuse/weights.hpp"
