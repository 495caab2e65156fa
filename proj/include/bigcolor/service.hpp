#pragma once

// HTTP facade over inference.
//
//   POST /v1/colorize    multipart: image (PNG/JPEG); fields: class (index,
//                        comma-separated vector, or "auto"), seed, variants,
//                        luminance_replace (true/false/1/0)
//   GET  /v1/jobs/{id}   status of a job created for a large input
//   GET  /v1/results/{name}.png
//   GET  /v1/classes
//   GET  /v1/health

// Eigen (via the bigcolor headers) must precede httplib: <resolv.h> defines
// a `_res` macro that collides with Eigen parameter names.
#include "bigcolor/archive.hpp"
#include "bigcolor/conditioning.hpp"
#include "bigcolor/image_io.hpp"
#include "bigcolor/inference.hpp"
#include "bigcolor/training.hpp"

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace bigcolor::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string checkpoint;
  std::string class_manifest;  // empty: numbered labels
  std::string classifier;      // optional classifier archive for class "auto"
  int workers = 2;
  long long inline_max_area = 512LL * 512LL;
  long long max_area = 4096LL * 4096LL;
  int max_variants = 16;
  std::size_t max_upload_bytes = 32u << 20;
  std::string result_dir = "results";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ServiceConfig, host, port, checkpoint, class_manifest, classifier,
                                                workers, inline_max_area, max_area, max_variants, max_upload_bytes,
                                                result_dir)

/// Environment overrides: BIGCOLOR_HOST, BIGCOLOR_PORT, BIGCOLOR_CHECKPOINT,
/// BIGCOLOR_CLASS_MANIFEST, BIGCOLOR_CLASSIFIER, BIGCOLOR_WORKERS,
/// BIGCOLOR_INLINE_MAX_AREA, BIGCOLOR_MAX_AREA, BIGCOLOR_MAX_VARIANTS,
/// BIGCOLOR_RESULT_DIR.
inline void apply_env_overrides(ServiceConfig& c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
  if (auto v = env("BIGCOLOR_HOST")) c.host = *v;
  if (auto v = env("BIGCOLOR_PORT")) c.port = std::stoi(*v);
  if (auto v = env("BIGCOLOR_CHECKPOINT")) c.checkpoint = *v;
  if (auto v = env("BIGCOLOR_CLASS_MANIFEST")) c.class_manifest = *v;
  if (auto v = env("BIGCOLOR_CLASSIFIER")) c.classifier = *v;
  if (auto v = env("BIGCOLOR_WORKERS")) c.workers = std::stoi(*v);
  if (auto v = env("BIGCOLOR_INLINE_MAX_AREA")) c.inline_max_area = std::stoll(*v);
  if (auto v = env("BIGCOLOR_MAX_AREA")) c.max_area = std::stoll(*v);
  if (auto v = env("BIGCOLOR_MAX_VARIANTS")) c.max_variants = std::stoi(*v);
  if (auto v = env("BIGCOLOR_RESULT_DIR")) c.result_dir = *v;
}

inline ServiceConfig load_service_config(const std::string& path) {
  ServiceConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open service config " + path);
    const auto j = nlohmann::json::parse(in);
    detail::check_keys(j, nlohmann::json(ServiceConfig{}), "");
    c = j.get<ServiceConfig>();
  }
  apply_env_overrides(c);
  if (c.workers < 1) throw std::invalid_argument("service: workers must be >= 1");
  return c;
}

enum class JobStatus { Queued, Running, Done, Failed };

inline const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "unknown";
}

struct Job {
  std::string id;
  JobStatus status = JobStatus::Queued;
  nlohmann::json request;
  nlohmann::json result;  // set iff done
  std::string error;      // set iff failed
  double queued_at = 0, started_at = 0, finished_at = 0;
};

/// Error with an HTTP status and the offending request field.
struct HttpError {
  int status;
  std::string field;
  std::string message;
};

inline std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {}
  ~Service() { stop(); }

  /// Loads one model snapshot per worker. Until this succeeds every endpoint
  /// answers 503.
  void load() {
    if (cfg_.checkpoint.empty()) throw std::runtime_error("service: no checkpoint configured");
    metrics::Classifier classifier;
    if (!cfg_.classifier.empty())
      classifier = [c = std::make_shared<metrics::ConvClassifier>(metrics::ConvClassifier::load(cfg_.classifier))](
                       const Tensor<float>& x) { return (*c)(x); };
    const InferenceLimits limits{cfg_.max_variants, cfg_.max_area};
    std::vector<std::unique_ptr<Colorizer>> pool;
    for (int i = 0; i < cfg_.workers; ++i)
      pool.push_back(std::make_unique<Colorizer>(load_inference_model<float>(cfg_.checkpoint), limits, classifier));
    const int k = pool.front()->num_classes();
    ClassManifest classes = cfg_.class_manifest.empty() ? ClassManifest::numbered(k) : ClassManifest::load(cfg_.class_manifest);
    if (classes.size() != k)
      throw std::runtime_error("class manifest has " + std::to_string(classes.size()) + " classes, checkpoint has " +
                               std::to_string(k));
    std::filesystem::create_directories(cfg_.result_dir);
    {
      std::lock_guard<std::mutex> lock(pool_mutex_);
      checkpoint_hash_ = file_hash(cfg_.checkpoint);
      has_classifier_ = static_cast<bool>(classifier);
      classes_ = std::move(classes);
      idle_ = std::move(pool);
      ready_ = true;
    }
    executor_ = std::thread([this] { run_jobs(); });
  }

  bool ready() const { return ready_; }
  const ServiceConfig& config() const { return cfg_; }

  /// Registers routes on `server`.
  void mount(httplib::Server& server) {
    server.set_payload_max_length(cfg_.max_upload_bytes + (1u << 20));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 413) res.status = 400;
      res.set_content(error_body({res.status, "", httplib::status_message(res.status)}).dump(), "application/json");
    });
    server.Post("/v1/colorize", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return handle_colorize(req); });
    });
    server.Get(R"(/v1/jobs/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return handle_job(req.matches[1]); });
    });
    server.Get(R"(/v1/results/([0-9a-f]+_[0-9]+\.png))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto path = std::filesystem::path(cfg_.result_dir) / std::string(req.matches[1]);
      try {
        const auto bytes = io::read_file(path);
        res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
      } catch (const io::ImageError&) {
        res.status = 404;
        res.set_content(error_body({404, "", "no such result"}).dump(), "application/json");
      }
    });
    server.Get("/v1/classes", [this](const httplib::Request&, httplib::Response& res) {
      respond(res, [&] { return handle_classes(); });
    });
    server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json j{{"ready", ready_.load()}};
      if (ready_) {
        j["status"] = "ok";
        j["checkpoint_hash"] = checkpoint_hash_;
        j["num_classes"] = classes_.size();
        j["workers"] = cfg_.workers;
      } else {
        j["status"] = "loading";
        res.status = 503;
      }
      res.set_content(j.dump(), "application/json");
    });
  }

  void stop() {
    {
      std::lock_guard<std::mutex> lock(jobs_mutex_);
      stopping_ = true;
    }
    jobs_cv_.notify_all();
    if (executor_.joinable()) executor_.join();
  }

  static nlohmann::json error_body(const HttpError& e) {
    nlohmann::json j{{"code", e.status}, {"message", e.message}};
    if (!e.field.empty()) j["field"] = e.field;
    return {{"error", j}};
  }

 private:
  struct Reply {
    int status;
    nlohmann::json body;
  };

  template <typename F>
  static void respond(httplib::Response& res, F&& f) {
    try {
      Reply r = f();
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    } catch (const HttpError& e) {
      res.status = e.status;
      res.set_content(error_body(e).dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(error_body({500, "", e.what()}).dump(), "application/json");
    }
  }

  void require_ready() const {
    if (!ready_) throw HttpError{503, "", "model not loaded"};
  }

  struct Parsed {
    ColorizeRequest request;
    std::string class_text;
    std::string key;  // content address of the request
  };

  static std::string field(const httplib::Request& req, const std::string& name) {
    if (req.has_file(name)) return req.get_file_value(name).content;
    if (req.has_param(name)) return req.get_param_value(name);
    return {};
  }

  Parsed parse(const httplib::Request& req) const {
    if (!req.has_file("image")) throw HttpError{400, "image", "multipart field 'image' is required"};
    const std::string& raw = req.get_file_value("image").content;
    if (raw.size() > cfg_.max_upload_bytes) throw HttpError{400, "image", "upload exceeds size limit"};
    Parsed p;
    Tensor<float> rgb;
    try {
      rgb = io::decode_image(io::Bytes(raw.begin(), raw.end()));
    } catch (const io::ImageError& e) {
      throw HttpError{400, "image", std::string("cannot decode image: ") + e.what()};
    }
    if (static_cast<long long>(rgb.h()) * rgb.w() > cfg_.max_area)
      throw HttpError{400, "image", "image area exceeds the limit of " + std::to_string(cfg_.max_area) + " pixels"};
    p.request.gray = colorspace::rgb_to_gray(rgb);

    p.class_text = field(req, "class");
    if (p.class_text.empty()) p.class_text = "0";
    p.request.class_spec = parse_class(p.class_text);
    const std::string seed = field(req, "seed");
    const std::string variants = field(req, "variants");
    const std::string lr = field(req, "luminance_replace");
    try {
      std::size_t used = 0;
      if (!seed.empty()) {
        p.request.seed = std::stoull(seed, &used);
        if (used != seed.size()) throw std::invalid_argument("seed");
      }
    } catch (const std::exception&) {
      throw HttpError{400, "seed", "seed must be a non-negative integer"};
    }
    try {
      std::size_t used = 0;
      if (!variants.empty()) {
        p.request.variants = std::stoi(variants, &used);
        if (used != variants.size()) throw std::invalid_argument("variants");
      }
    } catch (const std::exception&) {
      throw HttpError{400, "variants", "variants must be an integer"};
    }
    if (lr.empty() || lr == "true" || lr == "1") p.request.luminance_replace = true;
    else if (lr == "false" || lr == "0") p.request.luminance_replace = false;
    else throw HttpError{400, "luminance_replace", "luminance_replace must be true or false"};

    std::ostringstream key;
    key << checkpoint_hash_ << '|' << p.class_text << '|' << p.request.seed << '|' << p.request.variants << '|'
        << p.request.luminance_replace << '|' << raw;
    p.key = fnv1a_hex(key.str());
    return p;
  }

  static ClassSpec parse_class(const std::string& text) {
    if (text == "auto") return AutoClass{};
    try {
      if (text.find(',') == std::string::npos) {
        std::size_t used = 0;
        const int idx = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument("class");
        return idx;
      }
      std::vector<double> v;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
      return v;
    } catch (const std::exception&) {
      throw HttpError{422, "class", "class must be an index, a comma-separated class vector, or 'auto'"};
    }
  }

  Reply handle_colorize(const httplib::Request& req) {
    require_ready();
    Parsed p = parse(req);
    validate(p.request);
    const long long area = static_cast<long long>(p.request.gray.h()) * p.request.gray.w();
    if (area <= cfg_.inline_max_area) return {200, run(p, true)};

    const std::string key = p.key;
    std::lock_guard<std::mutex> lock(jobs_mutex_);
    auto it = jobs_.find(key);
    if (it == jobs_.end() || it->second.status == JobStatus::Failed) {
      Job job;
      job.id = key;
      job.request = echo(p);
      job.queued_at = now();
      jobs_[key] = job;
      queue_.push_back(std::move(p));
      jobs_cv_.notify_all();
    }
    return {202, job_json(jobs_.at(key))};
  }

  void validate(const ColorizeRequest& r) const {
    try {
      check_request(r, classes_.size(), {cfg_.max_variants, cfg_.max_area}, has_classifier_);
    } catch (const RequestError& e) {
      const int status = e.field() == "image" ? 400 : 422;
      throw HttpError{status, e.field(), e.what()};
    }
  }

  nlohmann::json echo(const Parsed& p) const {
    nlohmann::json j{{"seed", p.request.seed},
                     {"variants", p.request.variants},
                     {"luminance_replace", p.request.luminance_replace},
                     {"width", p.request.gray.w()},
                     {"height", p.request.gray.h()},
                     {"checkpoint_hash", checkpoint_hash_}};
    if (const int* idx = std::get_if<int>(&p.request.class_spec)) {
      j["class"] = *idx;
      j["class_label"] = classes_.label(*idx);
    } else {
      j["class"] = p.class_text;
    }
    return j;
  }

  /// Runs the forward passes on a pooled model snapshot and stores the PNGs
  /// under content-addressed names.
  nlohmann::json run(const Parsed& p, bool with_payload) {
    std::unique_ptr<Colorizer> c = acquire();
    ColorizeResult result;
    try {
      result = c->colorize(p.request);
    } catch (...) {
      release(std::move(c));
      throw;
    }
    release(std::move(c));
    nlohmann::json j = echo(p);
    j["id"] = p.key;
    j["status"] = "done";
    if (result.class_index >= 0) {
      j["class_index"] = result.class_index;
      j["class_label"] = classes_.label(result.class_index);
    }
    nlohmann::json images = nlohmann::json::array();
    for (std::size_t i = 0; i < result.images.size(); ++i) {
      const auto png = io::encode_png(result.images[i]);
      const std::string name = p.key + "_" + std::to_string(i) + ".png";
      const auto path = std::filesystem::path(cfg_.result_dir) / name;
      if (!std::filesystem::exists(path)) {
        const auto tmp = path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
        io::write_file(tmp, png);
        std::filesystem::rename(tmp, path);
      }
      nlohmann::json img{{"seed", result.seeds[i]}, {"uri", "/v1/results/" + name}};
      if (with_payload) img["png_base64"] = httplib::detail::base64_encode(std::string(png.begin(), png.end()));
      images.push_back(img);
    }
    j["images"] = images;
    return j;
  }

  std::unique_ptr<Colorizer> acquire() {
    std::unique_lock<std::mutex> lock(pool_mutex_);
    pool_cv_.wait(lock, [&] { return !idle_.empty(); });
    auto c = std::move(idle_.back());
    idle_.pop_back();
    return c;
  }

  void release(std::unique_ptr<Colorizer> c) {
    {
      std::lock_guard<std::mutex> lock(pool_mutex_);
      idle_.push_back(std::move(c));
    }
    pool_cv_.notify_one();
  }

  Reply handle_job(const std::string& id) {
    require_ready();
    std::lock_guard<std::mutex> lock(jobs_mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw HttpError{404, "id", "unknown job " + id};
    return {200, job_json(it->second)};
  }

  Reply handle_classes() {
    require_ready();
    nlohmann::json list = nlohmann::json::array();
    for (int i = 0; i < classes_.size(); ++i) list.push_back({{"index", i}, {"label", classes_.label(i)}});
    return {200, {{"classes", list}, {"count", classes_.size()}}};
  }

  static nlohmann::json job_json(const Job& job) {
    nlohmann::json j{{"id", job.id}, {"status", to_string(job.status)}, {"request", job.request},
                     {"timing", {{"queued_at", job.queued_at}, {"started_at", job.started_at}, {"finished_at", job.finished_at}}}};
    if (job.status == JobStatus::Done) j["result"] = job.result;
    if (job.status == JobStatus::Failed) j["error"] = job.error;
    return j;
  }

  void run_jobs() {
    while (true) {
      Parsed p;
      {
        std::unique_lock<std::mutex> lock(jobs_mutex_);
        jobs_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        p = std::move(queue_.front());
        queue_.pop_front();
        auto& job = jobs_.at(p.key);
        job.status = JobStatus::Running;
        job.started_at = now();
      }
      nlohmann::json result;
      std::string error;
      try {
        result = run(p, false);
      } catch (const std::exception& e) {
        error = e.what();
      }
      std::lock_guard<std::mutex> lock(jobs_mutex_);
      auto& job = jobs_.at(p.key);
      job.finished_at = now();
      if (error.empty()) {
        job.status = JobStatus::Done;
        job.result = std::move(result);
      } else {
        job.status = JobStatus::Failed;
        job.error = error;
      }
    }
  }

  static double now() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  }

  ServiceConfig cfg_;
  std::atomic<bool> ready_{false};
  std::string checkpoint_hash_;
  ClassManifest classes_;

  std::mutex pool_mutex_;
  std::condition_variable pool_cv_;
  std::vector<std::unique_ptr<Colorizer>> idle_;
  bool has_classifier_ = false;

  std::mutex jobs_mutex_;
  std::condition_variable jobs_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<Parsed> queue_;
  bool stopping_ = false;
  std::thread executor_;
};

}  // namespace bigcolor::service
