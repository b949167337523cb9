#include "litmas/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "litmas/digest.hpp"
#include "litmas/errors.hpp"
#include "litmas/rng.hpp"

namespace litmas {

void ModelDims::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be > 0");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("encoder hidden widths must be > 0");
  }
  if (embed_dim == 0) throw ConfigError("embedding dim d must be > 0");
  if (proj_dim == 0) throw ConfigError("projection dim k must be > 0");
}

std::vector<Tensor*> ModelBundle::parameters() {
  std::vector<Tensor*> out;
  for (Linear& l : encoder) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  if (mope) {
    for (Linear& l : mope->heads) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  if (classifier) {
    out.push_back(&classifier->weight);
    out.push_back(&classifier->bias);
  }
  return out;
}

std::vector<const Tensor*> ModelBundle::parameters() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<ModelBundle*>(this)->parameters()) out.push_back(t);
  return out;
}

namespace {

void check_linear(const Linear& l, std::size_t in, std::size_t out, const char* what) {
  if (l.weight.shape() != Shape{in, out} || l.bias.shape() != Shape{out}) {
    throw DimensionError(std::string(what) + " has weight " + shape_str(l.weight.shape()) +
                         " / bias " + shape_str(l.bias.shape()) + ", expected [" +
                         std::to_string(in) + "x" + std::to_string(out) + "]");
  }
}

Linear kaiming_linear(std::size_t in, std::size_t out, std::mt19937_64 rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Linear l{Tensor({in, out}), Tensor({out})};
  for (double& w : l.weight.data()) w = dist(rng);
  return l;
}

}  // namespace

void ModelBundle::validate() const {
  dims.validate();
  std::size_t in = dims.input_dim;
  if (encoder.size() != dims.hidden.size() + 1) {
    throw DimensionError("encoder has " + std::to_string(encoder.size()) + " layers, expected " +
                         std::to_string(dims.hidden.size() + 1));
  }
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::size_t out = l < dims.hidden.size() ? dims.hidden[l] : dims.embed_dim;
    check_linear(encoder[l], in, out, "encoder layer");
    in = out;
  }
  if (mope) {
    const std::size_t expect =
        mope->routing == HeadRouting::shared ? 1 : modalities.size();
    if (mope->heads.size() != expect) {
      throw DimensionError("MoPE has " + std::to_string(mope->heads.size()) +
                           " heads for " + std::to_string(modalities.size()) + " modalities");
    }
    for (const Linear& h : mope->heads) check_linear(h, dims.embed_dim, dims.proj_dim, "MoPE head");
  }
  if (classifier) {
    check_linear(*classifier, dims.proj_dim, 2, "classifier");
    if (!mope) throw DimensionError("classifier present without projection heads");
  }
  if (step == StepTag::step2 && (!mope || !classifier)) {
    throw DimensionError("step2 bundle lacks projection heads or classifier");
  }
  if (centers) {
    if (centers->size() != modalities.size()) {
      throw DimensionError("center bank size does not match modality table");
    }
    for (const Tensor& c : centers->centers) {
      if (c.shape() != Shape{dims.embed_dim}) throw DimensionError("center has wrong dim");
    }
  }
}

ModelBundle init_model(const ModelDims& dims, const ModalityTable& modalities,
                       std::uint64_t seed) {
  dims.validate();
  if (modalities.empty()) throw ConfigError("model needs at least one modality");
  ModelBundle b;
  b.dims = dims;
  b.modalities = modalities;
  b.step = StepTag::step1;
  std::size_t in = dims.input_dim;
  for (std::size_t l = 0; l <= dims.hidden.size(); ++l) {
    const std::size_t out = l < dims.hidden.size() ? dims.hidden[l] : dims.embed_dim;
    b.encoder.push_back(kaiming_linear(in, out, derive_rng(seed, "encoder", l)));
    in = out;
  }
  return b;
}

void attach_heads(ModelBundle& bundle, HeadRouting routing, std::uint64_t seed) {
  const std::size_t n = routing == HeadRouting::shared ? 1 : bundle.modalities.size();
  MoPEParams mope;
  mope.routing = routing;
  for (std::size_t i = 0; i < n; ++i) {
    mope.heads.push_back(kaiming_linear(bundle.dims.embed_dim, bundle.dims.proj_dim,
                                        derive_rng(seed, "mope-head", i)));
  }
  bundle.mope = std::move(mope);
  // Zero classifier: every fresh model scores all inputs at margin 0.
  bundle.classifier = Linear{Tensor({bundle.dims.proj_dim, 2}), Tensor({2})};
  bundle.step = StepTag::step2;
}

std::size_t param_count(const ModelBundle& bundle) {
  std::size_t n = 0;
  for (const Tensor* t : bundle.parameters()) n += t->numel();
  return n;
}

BoundModel::BoundModel(ng::Tape& tape, const ModelBundle& bundle, bool trainable)
    : bundle_(bundle) {
  bundle.validate();
  for (const Tensor* t : bundle.parameters()) {
    params_.push_back(trainable ? tape.leaf(*t) : tape.constant(*t));
  }
  encoder_begin_ = 0;
  heads_begin_ = 2 * bundle.encoder.size();
  classifier_begin_ = heads_begin_ + (bundle.mope ? 2 * bundle.mope->heads.size() : 0);
}

namespace {

ng::Value affine(const ng::Value& x, const ng::Value& w, const ng::Value& b) {
  return ng::add_bias(ng::matmul(x, w), b);
}

}  // namespace

ng::Value BoundModel::encode(const ng::Value& x) const {
  if (x.tensor().rank() != 2 || x.tensor().cols() != bundle_.dims.input_dim) {
    throw DimensionError("encode: input " + shape_str(x.shape()) + " does not match input_dim " +
                         std::to_string(bundle_.dims.input_dim));
  }
  ng::Value h = x;
  const std::size_t layers = bundle_.encoder.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = affine(h, params_[encoder_begin_ + 2 * l], params_[encoder_begin_ + 2 * l + 1]);
    if (l + 1 < layers) h = ng::relu(h);
  }
  return h;
}

ng::Value BoundModel::project(const ng::Value& z, std::span<const std::size_t> modalities) const {
  if (!bundle_.mope) throw ContractError("project: bundle has no projection heads");
  if (z.tensor().rank() != 2 || z.tensor().cols() != bundle_.dims.embed_dim) {
    throw DimensionError("project: embeddings " + shape_str(z.shape()) + " do not match d=" +
                         std::to_string(bundle_.dims.embed_dim));
  }
  const std::size_t n = z.tensor().rows();
  if (modalities.size() != n) throw DimensionError("project: one modality id per row required");
  const std::size_t n_mod = bundle_.modalities.size();
  for (std::size_t m : modalities) {
    if (m >= n_mod) throw ContractError("project: unknown modality id " + std::to_string(m));
  }
  if (bundle_.mope->routing == HeadRouting::shared) {
    return affine(z, params_[heads_begin_], params_[heads_begin_ + 1]);
  }

  std::vector<std::vector<std::size_t>> rows(n_mod);
  for (std::size_t i = 0; i < n; ++i) rows[modalities[i]].push_back(i);
  std::vector<ng::Value> parts;
  std::vector<std::vector<std::size_t>> positions;
  for (std::size_t m = 0; m < n_mod; ++m) {
    if (rows[m].empty()) continue;
    ng::Value zm = ng::gather_rows(z, rows[m]);
    parts.push_back(affine(zm, params_[heads_begin_ + 2 * m], params_[heads_begin_ + 2 * m + 1]));
    positions.push_back(std::move(rows[m]));
  }
  if (parts.empty()) {
    return z.tape().constant(Tensor({0, bundle_.dims.proj_dim}));
  }
  return ng::scatter_rows(parts, positions, n);
}

ng::Value BoundModel::classify(const ng::Value& h) const {
  if (!bundle_.classifier) throw ContractError("classify: bundle has no classifier");
  if (h.tensor().rank() != 2 || h.tensor().cols() != bundle_.dims.proj_dim) {
    throw DimensionError("classify: features " + shape_str(h.shape()) + " do not match k=" +
                         std::to_string(bundle_.dims.proj_dim));
  }
  return affine(h, params_[classifier_begin_], params_[classifier_begin_ + 1]);
}

Tensor encode(const ModelBundle& bundle, const Tensor& x) {
  ng::Tape tape;
  BoundModel m(tape, bundle, false);
  return m.encode(tape.constant(x)).tensor();
}

Tensor project(const ModelBundle& bundle, const Tensor& z,
               std::span<const std::size_t> modalities) {
  ng::Tape tape;
  BoundModel m(tape, bundle, false);
  return m.project(tape.constant(z), modalities).tensor();
}

Tensor classify(const ModelBundle& bundle, const Tensor& h) {
  ng::Tape tape;
  BoundModel m(tape, bundle, false);
  return m.classify(tape.constant(h)).tensor();
}

double liveness_score(std::span<const double> logits) {
  if (logits.size() != 2) throw DimensionError("liveness_score expects two logits");
  return logits[0] - logits[1];
}

Tensor feature_matrix(const DatasetView& view, std::span<const std::size_t> positions) {
  const std::size_t d = view.input_dim();
  const std::size_t n = positions.empty() ? view.size() : positions.size();
  Tensor x({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const Sample& s = view[positions.empty() ? r : positions[r]];
    std::copy(s.features.begin(), s.features.end(), x.data().begin() + r * d);
  }
  return x;
}

std::vector<std::size_t> modality_ids(const DatasetView& view,
                                      std::span<const std::size_t> positions) {
  const std::size_t n = positions.empty() ? view.size() : positions.size();
  std::vector<std::size_t> ids(n);
  for (std::size_t r = 0; r < n; ++r) ids[r] = view[positions.empty() ? r : positions[r]].modality;
  return ids;
}

// ---------------------------------------------------------------------------
// Checkpoint container, version 1. All integers little-endian.
//
//   "LITMASCK"  u32 version  u8 step
//   u64 input_dim  u64 n_hidden  u64 hidden[n_hidden]  u64 d  u64 k
//   u64 n_modalities  { u64 len  bytes }[n_modalities]
//   u8 has_mope  u8 routing  u64 n_heads  u8 has_classifier
//   u8 has_centers  u64 center_epoch
//   u64 n_tensors  { u64 rank  u64 dims[rank]  f64 data[numel] }[n_tensors]
//   u8[32] SHA-256 of every preceding byte
//
// Tensors appear in ModelBundle::parameters() order followed by the centers.
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

constexpr std::string_view kCkptMagic = "LITMASCK";
constexpr std::uint32_t kCkptVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_str(std::string_view s) {
    put<std::uint64_t>(s.size());
    out_.append(s);
  }
  void put_tensor(const Tensor& t) {
    put<std::uint64_t>(t.rank());
    for (std::size_t d : t.shape()) put<std::uint64_t>(d);
    out_.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(double));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Tensor get_tensor(const Shape& expect) {
    const auto rank = get<std::uint64_t>();
    if (rank > 8) throw CheckpointError("corrupt checkpoint: tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>();
    if (shape != expect) {
      throw CheckpointError("checkpoint tensor has shape " + shape_str(shape) + ", expected " +
                            shape_str(expect));
    }
    Tensor t(shape);
    need(t.numel() * sizeof(double));
    std::memcpy(t.data().data(), in_.data() + pos_, t.numel() * sizeof(double));
    pos_ += t.numel() * sizeof(double);
    return t;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw CheckpointError("corrupt checkpoint: truncated data");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelBundle& bundle) {
  bundle.validate();
  Writer w;
  w.str().append(kCkptMagic);
  w.put<std::uint32_t>(kCkptVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(bundle.step));
  w.put<std::uint64_t>(bundle.dims.input_dim);
  w.put<std::uint64_t>(bundle.dims.hidden.size());
  for (std::size_t h : bundle.dims.hidden) w.put<std::uint64_t>(h);
  w.put<std::uint64_t>(bundle.dims.embed_dim);
  w.put<std::uint64_t>(bundle.dims.proj_dim);
  w.put<std::uint64_t>(bundle.modalities.size());
  for (const auto& n : bundle.modalities.names()) w.put_str(n);
  w.put<std::uint8_t>(bundle.mope ? 1 : 0);
  w.put<std::uint8_t>(bundle.mope ? static_cast<std::uint8_t>(bundle.mope->routing) : 0);
  w.put<std::uint64_t>(bundle.mope ? bundle.mope->heads.size() : 0);
  w.put<std::uint8_t>(bundle.classifier ? 1 : 0);
  w.put<std::uint8_t>(bundle.centers ? 1 : 0);
  w.put<std::uint64_t>(bundle.centers ? bundle.centers->epoch : 0);
  const auto params = bundle.parameters();
  const std::size_t n_centers = bundle.centers ? bundle.centers->size() : 0;
  w.put<std::uint64_t>(params.size() + n_centers);
  for (const Tensor* t : params) w.put_tensor(*t);
  if (bundle.centers) {
    for (const Tensor& c : bundle.centers->centers) w.put_tensor(c);
  }
  const auto digest = sha256(w.str());
  w.str().append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return std::move(w.str());
}

ModelBundle deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCkptMagic.size() + 4 + 32 || !bytes.starts_with(kCkptMagic)) {
    throw CheckpointError("corrupt checkpoint: bad magic or truncated header");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 32);
  const auto digest = sha256(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), 32) != 0) {
    throw CheckpointError("corrupt checkpoint: digest mismatch (truncated or modified file)");
  }
  Reader r(body.substr(kCkptMagic.size()));
  const auto version = r.get<std::uint32_t>();
  if (version != kCkptVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCkptVersion) + ")");
  }
  ModelBundle b;
  const auto step = r.get<std::uint8_t>();
  if (step != 1 && step != 2) throw CheckpointError("corrupt checkpoint: bad step tag");
  b.step = static_cast<StepTag>(step);
  b.dims.input_dim = r.get<std::uint64_t>();
  b.dims.hidden.resize(r.get<std::uint64_t>());
  for (auto& h : b.dims.hidden) h = r.get<std::uint64_t>();
  b.dims.embed_dim = r.get<std::uint64_t>();
  b.dims.proj_dim = r.get<std::uint64_t>();
  std::vector<std::string> names(r.get<std::uint64_t>());
  for (auto& n : names) n = r.get_str();
  try {
    b.dims.validate();
    b.modalities = ModalityTable(std::move(names));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  const bool has_mope = r.get<std::uint8_t>() != 0;
  const auto routing = r.get<std::uint8_t>();
  const auto n_heads = r.get<std::uint64_t>();
  const bool has_classifier = r.get<std::uint8_t>() != 0;
  const bool has_centers = r.get<std::uint8_t>() != 0;
  const auto center_epoch = r.get<std::uint64_t>();
  if (routing > 1) throw CheckpointError("corrupt checkpoint: bad head routing");
  if (n_heads > b.modalities.size()) throw CheckpointError("corrupt checkpoint: head count");

  std::size_t in = b.dims.input_dim;
  for (std::size_t l = 0; l <= b.dims.hidden.size(); ++l) {
    const std::size_t out = l < b.dims.hidden.size() ? b.dims.hidden[l] : b.dims.embed_dim;
    b.encoder.push_back(Linear{Tensor({in, out}), Tensor({out})});
    in = out;
  }
  if (has_mope) {
    MoPEParams m;
    m.routing = static_cast<HeadRouting>(routing);
    m.heads.assign(n_heads, Linear{Tensor({b.dims.embed_dim, b.dims.proj_dim}),
                                   Tensor({b.dims.proj_dim})});
    b.mope = std::move(m);
  }
  if (has_classifier) b.classifier = Linear{Tensor({b.dims.proj_dim, 2}), Tensor({2})};
  if (has_centers) {
    b.centers = CenterBank{std::vector<Tensor>(b.modalities.size(), Tensor({b.dims.embed_dim})),
                           center_epoch};
  }

  const auto n_tensors = r.get<std::uint64_t>();
  const auto params = b.parameters();
  const std::size_t n_centers = b.centers ? b.centers->size() : 0;
  if (n_tensors != params.size() + n_centers) {
    throw CheckpointError("corrupt checkpoint: tensor count " + std::to_string(n_tensors));
  }
  for (Tensor* t : params) *t = r.get_tensor(t->shape());
  if (b.centers) {
    for (Tensor& c : b.centers->centers) c = r.get_tensor(c.shape());
  }
  if (!r.done()) throw CheckpointError("corrupt checkpoint: trailing bytes");
  try {
    b.validate();
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  return b;
}

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace litmas
