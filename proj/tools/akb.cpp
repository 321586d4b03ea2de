// Command-line front end: training, evaluation, sweeps, ablation, KB tools,
// the classic baseline and plot-data export.

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "akb/baseline.hpp"
#include "akb/binary_io.hpp"
#include "akb/config.hpp"
#include "akb/error.hpp"
#include "akb/harness.hpp"
#include "akb/image_io.hpp"
#include "akb/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace akb;
using namespace akb::harness;

namespace {

struct globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool deterministic = false;
};

experiment_config load(const globals& g) {
  if (g.config.empty()) throw config_error("--config is required for this command");
  auto cfg = load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

int workers(const globals& g) { return g.deterministic ? 1 : std::max(1, g.workers); }

void write_report(const experiment_config& cfg, const std::string& path, const std::string& csv,
                  const std::string& command) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  io::write_text(path, csv);
  io::write_text(path + ".meta.json", run_meta(cfg, command).dump(2) + "\n");
  std::cerr << "wrote " << path << "\n";
}

std::vector<image> test_split(const experiment_config& cfg) {
  return load_split(prepare_dataset(cfg), split_kind::test);
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive knowledge-based JSCC experiments"};
  app.require_subcommand(1);
  globals g;
  app.add_option("--config", g.config, "experiment JSON");
  app.add_option("--seed", g.seed, "override the root seed");
  app.add_option("--workers", g.workers, "evaluation threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "single-threaded, bit-exact mode");

  auto* train_codec = app.add_subcommand("train-codec", "build the source KB and train the codec");
  auto* train_agent = app.add_subcommand("train-agent", "train the channel-KB agent on the frozen codec");

  std::string out;
  auto* eval = app.add_subcommand("eval", "PSNR/CBR per scheme and SNR");
  eval->add_option("--out", out, "CSV path (default <output_dir>/eval.csv)");
  auto* sweep = app.add_subcommand("sweep", "PSNR versus CBR at the sweep SNR");
  sweep->add_option("--out", out, "CSV path (default <output_dir>/sweep.csv)");
  auto* ablate = app.add_subcommand("ablate", "akb_jscc vs no channel KB vs fixed rate");
  ablate->add_option("--out", out, "CSV path (default <output_dir>/ablate.csv)");

  auto* kb_cmd = app.add_subcommand("kb", "source knowledge base");
  kb_cmd->require_subcommand(1);
  auto* kb_build_cmd = kb_cmd->add_subcommand("build", "build the KB from the training split");
  kb_build_cmd->add_option("--out", out, "KB path (default from config)");
  std::string text, image_path;
  auto* kb_search_cmd = kb_cmd->add_subcommand("search", "nearest KB entry for a text or an image");
  auto* text_opt = kb_search_cmd->add_option("--text", text, "query text");
  kb_search_cmd->add_option("--image", image_path, "query image (captioned first)")->excludes(text_opt);

  int quality = 0;
  double snr = 10.0;
  std::string fixture, recon;
  auto* baseline = app.add_subcommand("baseline", "JPEG + LDPC + 16-QAM over AWGN");
  baseline->add_option("--quality", quality, "JPEG quality (default: calibrated from config)")->check(CLI::Range(1, 100));
  baseline->add_option("--snr", snr, "channel SNR in dB");
  baseline->add_option("--ldpc-fixture", fixture, "alist parity-check matrix");
  baseline->add_option("--image", image_path, "single image instead of the test split");
  baseline->add_option("--recon", recon, "write the reconstruction (PNG, single image only)");

  std::vector<std::string> inputs;
  auto* report = app.add_subcommand("report", "plot-data series from report CSVs");
  report->add_option("inputs", inputs, "eval/sweep/ablate CSVs")->required();
  report->add_option("--out", out, "output directory")->required();

  synthetic_spec sspec;
  auto* synth_cmd = app.add_subcommand("synth-data", "write a synthetic image set");
  synth_cmd->add_option("--out", out, "directory")->required();
  synth_cmd->add_option("--count", sspec.count, "images");
  synth_cmd->add_option("--size", sspec.size, "edge length");
  synth_cmd->add_option("--seed", sspec.seed, "dataset seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*train_codec) {
      train_codec_command(load(g));
    } else if (*train_agent) {
      train_agent_command(load(g));
    } else if (*eval || *sweep || *ablate) {
      const auto cfg = load(g);
      std::vector<scheme> needed = cfg.eval.schemes;
      if (*ablate) needed = {scheme::akb_jscc, scheme::akb_jscc_no_ckb, scheme::fixed_rate_jscc};
      evaluator ev(cfg, test_split(cfg), needed);
      ev.set_workers(workers(g));
      if (*eval) {
        write_report(cfg, out.empty() ? cfg.out("eval.csv") : out, eval_csv(run_eval(ev)), "eval");
      } else if (*sweep) {
        write_report(cfg, out.empty() ? cfg.out("sweep.csv") : out, sweep_csv(run_sweep(ev)), "sweep");
      } else {
        write_report(cfg, out.empty() ? cfg.out("ablate.csv") : out, ablate_csv(run_ablate(ev)), "ablate");
      }
    } else if (*kb_build_cmd) {
      const auto cfg = load(g);
      const auto m = prepare_dataset(cfg);
      const auto train = load_split(m, split_kind::train);
      auto provider = make_provider(cfg.kb);
      const auto store = build_kb(cfg, train, m, *provider);
      const auto path = out.empty() ? cfg.kb_path() : out;
      if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
      kb::kb_save(store, path);
      std::cout << json{{"path", path}, {"entries", store.size()}, {"dim", store.dim()}}.dump() << "\n";
    } else if (*kb_search_cmd) {
      const auto cfg = load(g);
      const auto store = kb::kb_load(cfg.kb_path());
      auto provider = make_provider(cfg.kb);
      std::string query = text;
      if (!image_path.empty()) query = provider->caption(io::read_image(image_path), cfg.kb.prompt).value;
      if (query.empty()) throw config_error("kb search needs --text or --image");
      const auto r = kb::kb_search(provider->embed(query).value, store);
      std::cout << json{{"query", query},
                        {"index", r.index},
                        {"id", store.entry_ids.empty() ? "" : store.entry_ids[static_cast<std::size_t>(r.index)]},
                        {"sq_distance", r.sq_distance}}
                       .dump()
                << "\n";
    } else if (*baseline) {
      experiment_config cfg;
      if (!g.config.empty()) cfg = load(g);
      if (g.seed) cfg.seed = *g.seed;
      const auto code = classic::load_alist(fixture.empty() ? cfg.ldpc_path() : fixture);
      std::vector<image> imgs;
      if (!image_path.empty()) {
        imgs.push_back(io::read_image(image_path));
      } else {
        imgs = test_split(load(g));
      }
      if (quality == 0) {
        if (cfg.eval.jpeg_quality) {
          quality = *cfg.eval.jpeg_quality;
        } else {
          // Nearest quality to the JPEG CBR target on these images.
          double best = INFINITY;
          for (int q = 1; q <= 100; ++q) {
            long sym = 0, src = 0;
            for (const auto& im : imgs) {
              sym += classic::chain_symbols(static_cast<long>(classic::jpeg_encode(im, q).size()) * 8, code);
              src += static_cast<long>(im.size());
            }
            const double err = std::abs(static_cast<double>(sym) / static_cast<double>(src) - cfg.eval.jpeg_cbr_target);
            if (err < best) {
              best = err;
              quality = q;
            }
          }
        }
      }
      const channel::channel_spec spec{channel::channel_kind::awgn, snr};
      std::vector<evaluator::per_image> rows;
      long failures = 0;
      for (std::size_t i = 0; i < imgs.size(); ++i) {
        rng_stream noise(cfg.seed, {0xE7A1, i});
        const auto c = classic::classic_chain(imgs[i], quality, spec, code, noise, cfg.baseline.max_iters);
        rows.push_back({c.report.psnr_db, c.report.symbols, static_cast<long>(imgs[i].size()), snr});
        failures += !c.report.success;
        if (!recon.empty() && imgs.size() == 1) io::write_png(recon, c.reconstruction);
      }
      const auto cl = summarize("jpeg_ldpc", format_snr(snr), rows, cfg.seed);
      std::cout << json{{"quality", quality},
                        {"snr_db", snr},
                        {"cbr_mean", cl.cbr_mean},
                        {"psnr_mean", cl.psnr_mean},
                        {"psnr_std", cl.psnr_std},
                        {"n_images", cl.n_images},
                        {"failures", failures},
                        {"jpeg_encoder", classic::jpeg_encoder_identity()}}
                       .dump()
                << "\n";
    } else if (*report) {
      for (const auto& p : emit_plotdata(inputs, out)) std::cout << p << "\n";
    } else if (*synth_cmd) {
      ensure_synthetic(out, sspec);
    }
  } catch (const akb::error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
