// Command-line front end: train, curate, evaluate, colorize, serve, plus
// helpers to create a toy dataset and a randomly initialized checkpoint.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "bigcolor/bigcolor.hpp"

namespace fs = std::filesystem;
using namespace bigcolor;

namespace {

int cmd_train(const std::string& config, const std::string& resume) {
  const RunConfig run = load_run_config(config);
  const auto result = run_training<float>(run, resume, std::cout);
  std::cerr << "trained to step " << result.steps << ", checkpoint " << result.last_checkpoint.string() << "\n";
  return 0;
}

int cmd_init(const std::string& config, const std::string& out) {
  RunConfig run;
  if (!config.empty()) run = load_run_config(config);
  else {
    run.model = desk_model_config();
    run.train = desk_train_config();
  }
  run.train.lambda_per = 0;  // no extractor needed to write the weights
  Trainer<float> trainer(run.model, run.train);
  trainer.save_checkpoint(out);
  std::cout << out << "\n";
  return 0;
}

int cmd_curate(const std::string& in, const std::string& out, double drop, int size) {
  const auto manifest = data::DatasetManifest::load(in);
  data::CurationReport report;
  const auto curated = data::curate_by_colorfulness(manifest, drop, &report, data::colorfulness_scorer(size));
  curated.save(out);
  std::cout << nlohmann::json{{"input", report.input},
                              {"dropped", report.dropped},
                              {"unreadable", report.unreadable},
                              {"kept", report.kept},
                              {"warnings", report.warnings}}
                   .dump()
            << "\n";
  return 0;
}

/// Reference statistics come from a stats JSON file or a manifest of images.
metrics::FeatureStats feature_stats(const std::string& src, metrics::RandomConvFeatures& features) {
  if (fs::path(src).extension() == ".json") return metrics::load_stats(src);
  const auto m = data::DatasetManifest::load(src);
  Eigen::MatrixXd all(static_cast<Eigen::Index>(m.size()), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Eigen::MatrixXd f = features(io::read_image(m.entries[i].path));
    if (i == 0) all.resize(static_cast<Eigen::Index>(m.size()), f.cols());
    all.row(static_cast<Eigen::Index>(i)) = f.row(0);
  }
  return metrics::compute_stats(all);
}

int cmd_evaluate(const std::string& pred, const std::string& ref, const std::string& classifier_path,
                 const std::string& out, const std::string& save_ref_stats) {
  metrics::RandomConvFeatures features;
  const auto pm = data::DatasetManifest::load(pred);
  if (pm.size() < 2) throw std::runtime_error("evaluate: need at least 2 predicted images");
  metrics::EvalReport report;
  std::optional<metrics::ConvClassifier> classifier;
  if (!classifier_path.empty()) classifier = metrics::ConvClassifier::load(classifier_path);
  double color_sum = 0;
  int correct = 0;
  Eigen::MatrixXd all;
  for (std::size_t i = 0; i < pm.size(); ++i) {
    const auto img = io::read_image(pm.entries[i].path);
    color_sum += metrics::colorfulness(img);
    const Eigen::MatrixXd f = features(img);
    if (i == 0) all.resize(static_cast<Eigen::Index>(pm.size()), f.cols());
    all.row(static_cast<Eigen::Index>(i)) = f.row(0);
    if (classifier) {
      const Tensor<float> logits = (*classifier)(img);
      correct += metrics::argmax_row(logits, 0) == pm.entries[i].class_index;
    }
  }
  report.colorfulness = color_sum / pm.size();
  const auto ref_stats = feature_stats(ref, features);
  if (!save_ref_stats.empty()) metrics::save_stats(save_ref_stats, ref_stats);
  report.fid = metrics::fid(metrics::compute_stats(all), ref_stats);
  if (classifier) report.classification_accuracy = 100.0 * correct / pm.size();
  const auto j = metrics::to_json(report);
  if (!out.empty()) {
    std::ofstream o(out);
    if (!o) throw std::runtime_error("cannot write " + out);
    o << j.dump(2) << "\n";
  }
  std::cout << j.dump() << "\n";
  return 0;
}

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

int cmd_colorize(const std::string& ckpt, const std::string& in, const std::string& cls, std::uint64_t seed,
                 int variants, const std::string& out, const std::string& classifier_path, bool no_replace,
                 long long max_area) {
  metrics::Classifier classifier;
  if (!classifier_path.empty())
    classifier = [c = std::make_shared<metrics::ConvClassifier>(metrics::ConvClassifier::load(classifier_path))](
                     const Tensor<float>& x) { return (*c)(x); };
  InferenceLimits limits;
  limits.max_variants = std::max(limits.max_variants, variants);
  if (max_area > 0) limits.max_area = max_area;
  Colorizer colorizer(load_inference_model<float>(ckpt), limits, classifier);
  const std::string hash = file_hash(ckpt);

  ClassSpec spec;
  if (cls == "auto") spec = AutoClass{};
  else spec = std::stoi(cls);

  std::vector<fs::path> inputs;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_regular_file() && is_image(e.path())) inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(in);
  }
  fs::create_directories(out);
  for (const auto& path : inputs) {
    ColorizeRequest req;
    req.gray = colorspace::rgb_to_gray(io::read_image(path));
    req.class_spec = spec;
    req.seed = seed;
    req.variants = variants;
    req.luminance_replace = !no_replace;
    const auto result = colorizer.colorize(req);
    const std::string stem = path.stem().string();
    nlohmann::json side{{"input", path.string()},
                        {"checkpoint_hash", hash},
                        {"class", result.class_index >= 0 ? nlohmann::json(result.class_index) : nlohmann::json(cls)},
                        {"seed", seed},
                        {"luminance_replace", req.luminance_replace},
                        {"outputs", nlohmann::json::array()}};
    for (std::size_t i = 0; i < result.images.size(); ++i) {
      const auto name = stem + "_v" + std::to_string(i) + ".png";
      io::write_png(fs::path(out) / name, result.images[i]);
      side["outputs"].push_back({{"file", name}, {"seed", result.seeds[i]}});
    }
    std::ofstream(fs::path(out) / (stem + ".json")) << side.dump(2) << "\n";
    std::cout << path.string() << " -> " << result.images.size() << " image(s)\n";
  }
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& config) {
  service::Service svc(service::load_service_config(config));
  httplib::Server server;
  svc.mount(server);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  const auto& cfg = svc.config();
  int port = cfg.port;
  if (port == 0) port = server.bind_to_any_port(cfg.host);
  else if (!server.bind_to_port(cfg.host, port)) throw std::runtime_error("cannot bind " + cfg.host + ":" + std::to_string(port));
  std::cout << nlohmann::json{{"listening", cfg.host}, {"port", port}}.dump() << std::endl;
  std::thread loader([&] {
    try {
      svc.load();
      std::cerr << "model loaded\n";
    } catch (const std::exception& e) {
      std::cerr << "error: model load failed: " << e.what() << "\n";
    }
  });
  server.listen_after_bind();
  loader.join();
  svc.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bigcolor: class-conditional grayscale image colorization"};
  app.require_subcommand(1);

  std::string config, resume, out, in, pred, ref, classifier, ckpt, cls = "0", save_ref;
  double drop = 0.10;
  int size = 256, variants = 1, count = 200;
  std::uint64_t seed = 0;
  bool no_replace = false;
  long long max_area = 0;

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  auto* init = app.add_subcommand("init", "write a randomly initialized checkpoint");
  init->add_option("--config", config, "run config (JSON); desk config if omitted")->check(CLI::ExistingFile);
  init->add_option("--out", out, "checkpoint path")->required();

  auto* curate = app.add_subcommand("curate", "drop the least colorful images from a manifest");
  curate->add_option("--in", in, "input manifest")->required()->check(CLI::ExistingFile);
  curate->add_option("--out", out, "output manifest")->required();
  curate->add_option("--drop", drop, "fraction to drop")->check(CLI::Range(0.0, 0.999999));
  curate->add_option("--size", size, "preprocessing size for scoring")->check(CLI::PositiveNumber);

  auto* evaluate = app.add_subcommand("evaluate", "colorfulness, FID and classification accuracy");
  evaluate->add_option("--pred", pred, "manifest of colorized images (path, class)")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ref", ref, "manifest of reference images, or a stats .json")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--classifier", classifier, "classifier archive")->check(CLI::ExistingFile);
  evaluate->add_option("--out", out, "report path (JSON)");
  evaluate->add_option("--save-ref-stats", save_ref, "write reference feature statistics here");

  auto* colorize = app.add_subcommand("colorize", "colorize an image or a directory of images");
  colorize->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  colorize->add_option("--in", in, "image or directory")->required()->check(CLI::ExistingPath);
  colorize->add_option("--class", cls, "class index or 'auto'");
  colorize->add_option("--seed", seed, "base seed; variant i uses seed + i");
  colorize->add_option("--variants", variants, "outputs per image")->check(CLI::PositiveNumber);
  colorize->add_option("--out", out, "output directory")->required();
  colorize->add_option("--classifier", classifier, "classifier archive for --class auto")->check(CLI::ExistingFile);
  colorize->add_flag("--no-luminance-replace", no_replace, "keep the generator's luminance");
  colorize->add_option("--max-area", max_area, "largest accepted input area in pixels");

  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--config", config, "service config (JSON)")->check(CLI::ExistingFile);

  auto* toy = app.add_subcommand("make-toy-data", "write the two-class toy dataset");
  toy->add_option("--out", out, "output directory")->required();
  toy->add_option("--count", count, "number of images")->check(CLI::PositiveNumber);
  toy->add_option("--seed", seed, "seed");
  toy->add_option("--size", size, "image size")->check(CLI::PositiveNumber);

  size = 256;
  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, resume);
    if (*init) return cmd_init(config, out);
    if (*curate) return cmd_curate(in, out, drop, size);
    if (*evaluate) return cmd_evaluate(pred, ref, classifier, out, save_ref);
    if (*colorize) return cmd_colorize(ckpt, in, cls, seed, variants, out, classifier, no_replace, max_area);
    if (*serve) return cmd_serve(config);
    if (*toy) {
      if (toy->count("--size") == 0) size = 64;
      std::cout << data::write_toy_dataset(out, count, seed, size).string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
