#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bigcolor/archive.hpp"
#include "bigcolor/conditioning.hpp"
#include "bigcolor/config.hpp"
#include "bigcolor/encoder.hpp"
#include "bigcolor/generator.hpp"

namespace bigcolor {

/// Class embedding A, encoder E and generator G: the part of the system that
/// is needed at inference time and that the EMA shadow tracks.
template <typename T>
class ColorizationModel {
 public:
  explicit ColorizationModel(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg), rng_(seed) {
    cfg.validate();
    embedding_ = ClassEmbedding<T>(cfg.num_classes, cfg.class_dim, rng_, cfg.embedding_init_std);
    encoder_ = std::make_unique<Encoder<T>>(cfg.encoder, cfg.class_dim, rng_);
    generator_ = std::make_unique<Generator<T>>(cfg.generator, cfg.encoder.feature_channels(),
                                                cfg.encoder.downsample_factor, cfg.chunk_dim(), rng_);
  }

  struct Forward {
    Tensor<T> class_code;
    Tensor<T> feature;
    Tensor<T> image;  // network range
  };

  /// gray: (N x 1 x H x W) in [-1, 1]; class_vec: (N x K); z: (N x z_dim).
  Forward forward(const Tensor<T>& gray, const Tensor<T>& class_vec, const Tensor<T>& z, const nn::Mode& mode) {
    if (static_cast<int>(z.item_size()) != cfg_.z_dim() || z.n() != gray.n())
      throw std::invalid_argument("latent batch " + z.shape_string() + " does not match z_dim " +
                                  std::to_string(cfg_.z_dim()));
    Forward out;
    out.class_code = embedding_.forward(class_vec, mode);
    out.feature = encoder_->forward(gray, out.class_code, mode);
    out.image = generator_->forward(out.feature, assemble_condition(z, out.class_code, cfg_.chunk_count()), mode);
    return out;
  }

  /// Backpropagate dL/dimage through G, E and A (parameter grads accumulate).
  /// Returns dL/dgray.
  Tensor<T> backward(const Tensor<T>& dimage) {
    Tensor<T> df = generator_->backward(dimage);
    Tensor<T> dc = condition_class_grad(generator_->chunk_grads(), cfg_.class_dim);
    Tensor<T> dgray = encoder_->backward(df, dc);
    embedding_.backward(dc);
    return dgray;
  }

  nn::ParamRefs<T> params() {
    nn::ParamRefs<T> out;
    embedding_.params(out, "embedding");
    encoder_->params(out, "encoder");
    generator_->params(out, "generator");
    return out;
  }
  nn::BufferRefs<T> buffers() {
    nn::BufferRefs<T> out;
    encoder_->buffers(out, "encoder");
    generator_->buffers(out, "generator");
    return out;
  }

  void save(Archive& ar, const std::string& prefix) {
    for (auto& [name, p] : params()) ar.put(nn::join(prefix, name), p->value);
    for (auto& [name, b] : buffers()) ar.put(nn::join(prefix, name), *b);
  }
  void load(const Archive& ar, const std::string& prefix) {
    for (auto& [name, p] : params()) assign(ar, nn::join(prefix, name), p->value);
    for (auto& [name, b] : buffers()) assign(ar, nn::join(prefix, name), *b);
  }

  const ModelConfig& config() const { return cfg_; }
  ClassEmbedding<T>& embedding() { return embedding_; }
  Encoder<T>& encoder() { return *encoder_; }
  Generator<T>& generator() { return *generator_; }

 private:
  static void assign(const Archive& ar, const std::string& name, Tensor<T>& dst) {
    Tensor<T> t = ar.get<T>(name);
    if (t.shape() != dst.shape())
      throw ArchiveError("tensor '" + name + "' has shape " + t.shape_string() + ", model expects " +
                         dst.shape_string());
    dst = std::move(t);
  }

  ModelConfig cfg_;
  Rng rng_;
  ClassEmbedding<T> embedding_;
  std::unique_ptr<Encoder<T>> encoder_;
  std::unique_ptr<Generator<T>> generator_;
};

/// Mapping from external checkpoint tensor names to module parameter names,
/// one "external_name<TAB>module_name" pair per line ('#' comments allowed).
inline std::vector<std::pair<std::string, std::string>> load_name_mapping(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open weight mapping " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string ext, mod;
    if (!(is >> ext >> mod))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected '<external> <module>'");
    out.emplace_back(ext, mod);
  }
  return out;
}

/// Copy external tensors into `params` (names prefixed by `scope`, e.g.
/// "generator"). Only mapping entries under that scope are used. Shapes must
/// match exactly. Returns the number of imported tensors.
template <typename T>
int import_pretrained(const nn::ParamRefs<T>& params, const Archive& external,
                      const std::vector<std::pair<std::string, std::string>>& mapping, const std::string& scope) {
  std::map<std::string, nn::Param<T>*> by_name(params.begin(), params.end());
  int imported = 0;
  for (const auto& [ext, mod] : mapping) {
    if (mod.rfind(scope + ".", 0) != 0) continue;
    auto it = by_name.find(mod);
    if (it == by_name.end()) throw ArchiveError("weight mapping names unknown parameter '" + mod + "'");
    Tensor<T> t = external.get<T>(ext);
    if (t.shape() != it->second->value.shape())
      throw ArchiveError("pretrained tensor '" + ext + "' has shape " + t.shape_string() + ", parameter '" + mod +
                         "' expects " + it->second->value.shape_string());
    it->second->value = std::move(t);
    ++imported;
  }
  if (imported == 0) throw ArchiveError("weight mapping has no entries for '" + scope + "'");
  return imported;
}

}  // namespace bigcolor
