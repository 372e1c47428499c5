// lumafuse command-line front end.
//
// Exit status: 0 success, 1 runtime failure, 2 usage error.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lumafuse/lumafuse.hpp"

namespace lf = lumafuse;

namespace {

struct WeightPaths {
  std::string encoder;
  std::string detail;
};

void add_weight_options(CLI::App* cmd, WeightPaths& w) {
  cmd->add_option("--encoder", w.encoder, "Encoder weight file (NNW1)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--detail", w.detail, "Detail network weight file (NNW1)")->required()->check(CLI::ExistingFile);
}

lf::DetailInput parse_wiring(const std::string& s) {
  return s == "enhanced" ? lf::DetailInput::Enhanced : lf::DetailInput::Original;
}

void write_text(const std::string& path, const std::string& text) {
  lf::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::string& path) {
  const lf::Bytes b = lf::read_file(path);
  return std::string(b.begin(), b.end());
}

void add_optimizer_options(CLI::App* cmd, lf::OptimizerConfig& cfg) {
  cmd->add_option("--lr", cfg.learning_rate, "Step size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--iters", cfg.max_iters, "Maximum iterations")->capture_default_str()->check(CLI::Range(1, 1 << 30));
  cmd->add_option("--tol", cfg.tolerance, "Stop when the loss changes by less than this")->capture_default_str();
}

const lf::Embedding& lookup(const lf::EmbeddingTable& t, const std::string& name) {
  const lf::Embedding* e = t.find(name);
  if (!e) throw std::runtime_error("embedding '" + name + "' not found");
  return *e;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-light enhancement engine: ISP filters fused with a residual CNN"};
  app.require_subcommand(1);

  // enhance
  WeightPaths ew;
  std::string enh_in, enh_out, enh_wiring = "original", enh_params;
  auto* enh = app.add_subcommand("enhance", "Enhance one PPM image");
  enh->add_option("input", enh_in, "Input P6 image")->required()->check(CLI::ExistingFile);
  enh->add_option("output", enh_out, "Output P6 image")->required();
  add_weight_options(enh, ew);
  enh->add_option("--wiring", enh_wiring, "Detail network input")
      ->check(CLI::IsMember({"original", "enhanced"}))
      ->capture_default_str();
  enh->add_option("--params-out", enh_params, "Also write the predicted ISP parameters");

  // metrics
  std::string met_ref, met_dist, met_name, met_format = "csv";
  bool met_no_header = false;
  auto* met = app.add_subcommand("metrics", "PSNR, SSIM and VIF of a distorted image against a reference");
  met->add_option("reference", met_ref, "Reference P6 image")->required()->check(CLI::ExistingFile);
  met->add_option("distorted", met_dist, "Distorted P6 image")->required()->check(CLI::ExistingFile);
  met->add_option("--name", met_name, "Row label (defaults to the distorted path)");
  met->add_option("--format", met_format, "csv or kv")->check(CLI::IsMember({"csv", "kv"}))->capture_default_str();
  met->add_flag("--no-header", met_no_header, "Omit the CSV header line");

  // fit-isp
  std::string fit_in, fit_ref, fit_params = "params.txt", fit_trace, fit_step = "gauss-newton";
  lf::OptimizerConfig fit_cfg;
  auto* fit = app.add_subcommand("fit-isp", "Fit ISP parameters mapping an image onto a reference (MSE surrogate)");
  fit->add_option("input", fit_in, "Input P6 image")->required()->check(CLI::ExistingFile);
  fit->add_option("reference", fit_ref, "Reference P6 image")->required()->check(CLI::ExistingFile);
  fit->add_option("--params-out", fit_params, "Fitted parameter file")->capture_default_str();
  fit->add_option("--trace", fit_trace, "Write the iter,loss trace here");
  fit->add_option("--step", fit_step, "Descent direction")
      ->check(CLI::IsMember({"gauss-newton", "gradient"}))
      ->capture_default_str();
  add_optimizer_options(fit, fit_cfg);

  // refine-prompt
  std::string rp_file, rp_prompt, rp_neg, rp_normal, rp_low, rp_out, rp_trace, rp_name, rp_mode = "literal";
  std::vector<std::string> rp_series;
  lf::Margins rp_margins;
  lf::OptimizerConfig rp_cfg;
  auto* rp = app.add_subcommand("refine-prompt", "Refine a prompt embedding under the ranking loss");
  rp->add_option("embeddings", rp_file, "EMB1 file holding every named embedding")->required()->check(CLI::ExistingFile);
  rp->add_option("--prompt", rp_prompt, "Prompt to refine")->required();
  rp->add_option("--negative", rp_neg, "Negative prompt")->required();
  rp->add_option("--normal", rp_normal, "Normal-light image embedding")->required();
  rp->add_option("--low", rp_low, "Low-light image embedding")->required();
  rp->add_option("--series", rp_series, "Iterate embeddings en0 en1 en2 en3 en")->required()->expected(5);
  rp->add_option("--output", rp_out, "Output EMB1 file (input rows plus the refined prompt)")->required();
  rp->add_option("--name", rp_name, "Name of the refined row (default <prompt>.refined)");
  rp->add_option("--trace", rp_trace, "Write the iter,loss trace here");
  rp->add_option("--mode", rp_mode, "literal or text-consistent second hinge")
      ->check(CLI::IsMember({"literal", "text-consistent"}))
      ->capture_default_str();
  rp->add_option("--p0", rp_margins.p0, "Margin between normal and low")->capture_default_str();
  rp->add_option("--p1", rp_margins.p1, "Second margin")->capture_default_str();
  rp->add_option("--p2", rp_margins.p2, "Margin between consecutive iterates")->capture_default_str();
  add_optimizer_options(rp, rp_cfg);

  // iterate
  std::string it_in, it_params, it_prefix;
  auto* itc = app.add_subcommand("iterate", "Write the four weaker iterates and the final enhancement");
  itc->add_option("input", it_in, "Input P6 image")->required()->check(CLI::ExistingFile);
  itc->add_option("params", it_params, "Final ISP parameter file")->required()->check(CLI::ExistingFile);
  itc->add_option("--prefix", it_prefix, "Output prefix; writes <prefix>_en0.ppm .. _en3.ppm and <prefix>_en.ppm")
      ->required();

  // bench
  WeightPaths bw;
  std::vector<std::string> bench_images;
  std::size_t bench_reps = 5, bench_synth = 1;
  std::string bench_edge, bench_cloud;
  auto* bench = app.add_subcommand("bench", "Time enhance() and report simulated edge and cloud FPS");
  add_weight_options(bench, bw);
  bench->add_option("--image", bench_images, "Input P6 images (default: seeded synthetic 64x64 frames)")
      ->check(CLI::ExistingFile);
  bench->add_option("--synthetic", bench_synth, "Synthetic frames when no --image is given")->capture_default_str();
  bench->add_option("--repetitions", bench_reps, "Timed passes over the image set")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench->add_option("--edge", bench_edge, "Edge latency config")->check(CLI::ExistingFile);
  bench->add_option("--cloud", bench_cloud, "Cloud latency config")->check(CLI::ExistingFile);

  // simulate
  std::string sim_cfg;
  std::size_t sim_max = 40, sim_step = 1;
  auto* sim = app.add_subcommand("simulate", "Latency curve for a transmission config, as CSV");
  sim->add_option("config", sim_cfg, "key=value latency config")->required()->check(CLI::ExistingFile);
  sim->add_option("--max-images", sim_max, "Largest image count")->capture_default_str();
  sim->add_option("--step", sim_step, "Image count increment")->capture_default_str()->check(CLI::PositiveNumber);

  // serve
  WeightPaths sw;
  lf::ServerConfig srv_cfg;
  srv_cfg.port = 9090;
  std::string srv_wiring = "original";
  auto* srv = app.add_subcommand("serve", "Serve enhancement over length-framed TCP");
  add_weight_options(srv, sw);
  srv->add_option("--host", srv_cfg.host, "Bind address")->capture_default_str();
  srv->add_option("--port", srv_cfg.port, "Bind port (0 picks one)")->capture_default_str();
  srv->add_option("--max-payload", srv_cfg.max_payload, "Largest accepted request in bytes")->capture_default_str();
  srv->add_option("--workers", srv_cfg.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  srv->add_option("--wiring", srv_wiring, "Detail network input")
      ->check(CLI::IsMember({"original", "enhanced"}))
      ->capture_default_str();

  // init-weights
  std::string iw_arch, iw_out;
  std::uint64_t iw_seed = 1;
  bool iw_zero = false;
  auto* iw = app.add_subcommand("init-weights", "Write seeded random (or zero) weights for an architecture");
  iw->add_option("arch", iw_arch, "encoder or detail")->required()->check(CLI::IsMember({"encoder", "detail"}));
  iw->add_option("output", iw_out, "Output NNW1 file")->required();
  iw->add_option("--seed", iw_seed, "Generator seed")->capture_default_str();
  iw->add_flag("--zero", iw_zero, "All-zero weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*enh) {
      const auto enc = lf::read_weights_file(ew.encoder), det = lf::read_weights_file(ew.detail);
      const auto res = lf::enhance_with_params(lf::read_ppm_file(enh_in), enc, det, parse_wiring(enh_wiring));
      lf::write_ppm_file(enh_out, res.output);
      if (!enh_params.empty()) write_text(enh_params, lf::format_params(res.params));
    } else if (*met) {
      const auto report = lf::assess(lf::read_ppm_file(met_ref), lf::read_ppm_file(met_dist));
      if (met_format == "kv") {
        std::cout << report.key_values() << "\n";
      } else {
        if (!met_no_header) std::cout << lf::IqaReport::csv_header() << "\n";
        std::cout << report.csv_row(met_name.empty() ? met_dist : met_name) << "\n";
      }
    } else if (*fit) {
      fit_cfg.isp_step = fit_step == "gradient" ? lf::IspStep::Gradient : lf::IspStep::GaussNewton;
      const auto result = lf::fit_isp_params(lf::read_ppm_file(fit_in), lf::read_ppm_file(fit_ref), fit_cfg);
      write_text(fit_params, "# objective=mse-surrogate\n" + lf::format_params(result.params));
      if (!fit_trace.empty()) write_text(fit_trace, result.trace.to_csv());
      std::printf("objective=mse-surrogate initial=%.9g final=%.9g iterations=%zu\n", result.initial_loss,
                  result.loss, result.trace.loss.size() - 1);
    } else if (*rp) {
      const auto loaded = lf::load_embeddings(lf::read_file(rp_file));
      for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
      const auto& t = loaded.table;
      const lf::RefinementSet set{lookup(t, rp_normal),
                                  lookup(t, rp_low),
                                  {lookup(t, rp_series[0]), lookup(t, rp_series[1]), lookup(t, rp_series[2]),
                                   lookup(t, rp_series[3]), lookup(t, rp_series[4])}};
      const auto mode = rp_mode == "literal" ? lf::CwMode::Literal : lf::CwMode::TextConsistent;
      const auto result = lf::refine_prompt(lookup(t, rp_prompt), lookup(t, rp_neg), set, rp_margins, rp_cfg, mode);
      lf::EmbeddingTable out = t;
      out.add(rp_name.empty() ? rp_prompt + ".refined" : rp_name, result.prompt);
      lf::write_file(rp_out, lf::save_embeddings(out));
      if (!rp_trace.empty()) write_text(rp_trace, result.trace.to_csv());
      std::printf("initial=%.9g final=%.9g iterations=%zu\n", result.initial_loss, result.loss,
                  result.trace.loss.size() - 1);
    } else if (*itc) {
      const auto series = lf::generate_iterates(lf::read_ppm_file(it_in), lf::parse_params(read_text(it_params)));
      for (std::size_t k = 0; k < series.images.size(); ++k) {
        lf::write_ppm_file(it_prefix + "_en" + std::to_string(k) + ".ppm", series.images[k]);
      }
      lf::write_ppm_file(it_prefix + "_en.ppm", series.final_image);
    } else if (*bench) {
      const auto enc = lf::read_weights_file(bw.encoder), det = lf::read_weights_file(bw.detail);
      std::vector<lf::Image> images;
      for (const auto& p : bench_images) images.push_back(lf::read_ppm_file(p));
      if (images.empty()) {
        if (bench_synth == 0) throw lf::ParameterError("no images to benchmark");
        for (std::size_t i = 0; i < bench_synth; ++i) {
          images.push_back(lf::synthetic::scaled(lf::synthetic::scene(64, 64, 100 + i), 0.3));
        }
      }
      const auto r = lf::bench_pipeline(enc, det, images, bench_reps);
      std::printf("frames=%zu ms_per_frame=%.3f fps=%.3f deterministic=%d\n", r.frames, r.ms_per_frame, r.fps,
                  r.deterministic ? 1 : 0);
      for (const auto& [label, path] : {std::pair{"edge", bench_edge}, std::pair{"cloud", bench_cloud}}) {
        if (path.empty()) continue;
        const auto m = lf::read_latency_model_file(path);
        std::printf("%s_fps=%.3f %s_latency_40_ms=%.3f\n", label, lf::effective_fps(r.ms_per_frame, m), label,
                    lf::simulate_latency(m, 40));
      }
    } else if (*sim) {
      std::cout << lf::latency_curve_csv(lf::latency_curve(lf::read_latency_model_file(sim_cfg), sim_max, sim_step));
    } else if (*srv) {
      const auto enc = lf::read_weights_file(sw.encoder), det = lf::read_weights_file(sw.detail);
      srv_cfg.wiring = parse_wiring(srv_wiring);
      lf::Server server(srv_cfg, enc, det);
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);  // inherited by server threads
      const auto port = server.start();
      std::printf("listening on %s:%u\n", srv_cfg.host.c_str(), static_cast<unsigned>(port));
      std::fflush(stdout);
      int sig = 0;
      sigwait(&set, &sig);
      server.stop();
    } else if (*iw) {
      const auto& spec = iw_arch == "encoder" ? lf::encoder_arch() : lf::detail_arch();
      lf::write_file(iw_out, lf::save_weights(iw_zero ? lf::zero_weights(spec) : lf::random_weights(spec, iw_seed)));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
