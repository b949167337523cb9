#include "litmas/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "litmas/errors.hpp"
#include "litmas/rng.hpp"

namespace litmas {

ModalityTable::ModalityTable(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("modality name must be nonempty");
    if (n.find_first_of(",\t\n\r ") != std::string::npos) {
      throw ConfigError("modality name '" + n + "' contains a separator character");
    }
    if (!seen.insert(n).second) throw ConfigError("duplicate modality name '" + n + "'");
  }
}

std::optional<std::size_t> ModalityTable::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

DatasetView::DatasetView(ModalityTable modalities, std::size_t input_dim,
                         std::vector<Sample> samples)
    : modalities_(std::move(modalities)),
      input_dim_(input_dim),
      samples_(std::move(samples)),
      bonafide_(modalities_.size()),
      spoof_(modalities_.size()) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (s.modality >= modalities_.size()) {
      throw ConfigError("sample '" + s.id + "' has unknown modality index " +
                        std::to_string(s.modality));
    }
    if (s.features.size() != input_dim_) {
      throw DimensionError("sample '" + s.id + "' has " + std::to_string(s.features.size()) +
                           " features, expected " + std::to_string(input_dim_));
    }
    (s.label == Label::bonafide ? bonafide_ : spoof_)[s.modality].push_back(i);
  }
}

std::vector<std::size_t> DatasetView::present_modalities() const {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < modalities_.size(); ++m) {
    if (!bonafide_[m].empty() || !spoof_[m].empty()) out.push_back(m);
  }
  return out;
}

DatasetView DatasetView::subset(const std::vector<std::size_t>& positions) const {
  std::vector<Sample> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(samples_.at(p));
  return DatasetView(modalities_, input_dim_, std::move(out));
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error("cannot format double");
  return std::string(buf, end);
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) return std::nullopt;
  return v;
}

namespace {

constexpr std::string_view kFeatureMagic = "litmas-features v1 dim=";
constexpr std::string_view kModalitiesKey = "modalities=";

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace

DatasetView parse_feature_text(std::string_view text) {
  std::optional<std::size_t> dim;
  std::optional<ModalityTable> table;
  std::vector<Sample> samples;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    if (!dim) {
      if (!line.starts_with(kFeatureMagic)) {
        throw ParseError("expected header 'litmas-features v1 dim=<D>'", line_no);
      }
      std::string_view d = line.substr(kFeatureMagic.size());
      std::size_t v = 0;
      auto [end, ec] = std::from_chars(d.data(), d.data() + d.size(), v);
      if (ec != std::errc{} || end != d.data() + d.size() || v == 0) {
        throw ParseError("invalid feature dimension '" + std::string(d) + "'", line_no);
      }
      dim = v;
      continue;
    }
    if (!table) {
      if (!line.starts_with(kModalitiesKey)) {
        throw ParseError("expected 'modalities=<name0,name1,...>'", line_no);
      }
      std::string_view list = line.substr(kModalitiesKey.size());
      std::vector<std::string> names;
      if (!list.empty()) {
        for (auto n : split(list, ',')) names.emplace_back(n);
      }
      try {
        table = ModalityTable(std::move(names));
      } catch (const ConfigError& e) {
        throw ParseError(e.what(), line_no);
      }
      continue;
    }

    const auto fields = split(line, '\t');
    if (fields.size() != 5) {
      throw ParseError("expected 5 tab-separated fields, got " + std::to_string(fields.size()),
                       line_no);
    }
    Sample s;
    s.id = std::string(fields[0]);
    if (s.id.empty()) throw ParseError("empty sample id", line_no);
    const auto m = table->find(fields[1]);
    if (!m) throw ParseError("unknown modality '" + std::string(fields[1]) + "'", line_no);
    s.modality = *m;
    if (fields[2] == "0") {
      s.label = Label::bonafide;
    } else if (fields[2] == "1") {
      s.label = Label::spoof;
    } else {
      throw ParseError("label must be 0 or 1, got '" + std::string(fields[2]) + "'", line_no);
    }
    s.dataset_tag = std::string(fields[3]);
    s.features.reserve(*dim);
    for (auto tok : split(fields[4], ' ')) {
      if (tok.empty()) continue;
      const auto v = parse_double(tok);
      if (!v || !std::isfinite(*v)) {
        throw ParseError("invalid feature value '" + std::string(tok) + "'", line_no);
      }
      s.features.push_back(*v);
    }
    if (s.features.size() != *dim) {
      throw ParseError("expected " + std::to_string(*dim) + " features, got " +
                           std::to_string(s.features.size()),
                       line_no);
    }
    samples.push_back(std::move(s));
  }
  if (!dim) throw ParseError("missing header", line_no);
  if (!table) throw ParseError("missing modalities line", line_no);
  return DatasetView(std::move(*table), *dim, std::move(samples));
}

DatasetView load_feature_file(const std::filesystem::path& path) {
  return parse_feature_text(read_file(path));
}

std::string format_feature_text(const DatasetView& view) {
  std::string out;
  out += kFeatureMagic;
  out += std::to_string(view.input_dim());
  out += '\n';
  out += kModalitiesKey;
  for (std::size_t m = 0; m < view.modalities().size(); ++m) {
    if (m) out += ',';
    out += view.modalities().name(m);
  }
  out += '\n';
  for (const Sample& s : view.samples()) {
    if (s.id.empty() || s.id.find_first_of("\t\n\r") != std::string::npos ||
        s.id.front() == '#' || s.dataset_tag.find_first_of("\t\n\r") != std::string::npos) {
      throw ConfigError("sample id/tag '" + s.id + "' cannot be written to a feature file");
    }
    out += s.id;
    out += '\t';
    out += view.modalities().name(s.modality);
    out += '\t';
    out += s.label == Label::bonafide ? '0' : '1';
    out += '\t';
    out += s.dataset_tag;
    out += '\t';
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      if (j) out += ' ';
      out += format_double(s.features[j]);
    }
    out += '\n';
  }
  return out;
}

void write_feature_file(const DatasetView& view, const std::filesystem::path& path) {
  write_file(path, format_feature_text(view));
}

void SynthConfig::validate() const {
  if (input_dim == 0) throw ConfigError("synthetic input_dim must be > 0");
  if (modalities.empty()) throw ConfigError("synthetic config needs at least one modality");
  if (bonafide_per_modality == 0) throw ConfigError("bonafide_per_modality must be > 0");
  if (spoof_per_modality == 0) throw ConfigError("spoof_per_modality must be > 0");
  std::vector<std::string> names;
  for (const auto& m : modalities) {
    names.push_back(m.name);
    if (m.bonafide_mean.size() != input_dim) {
      throw ConfigError("bonafide mean of '" + m.name + "' has wrong length");
    }
    if (!(m.bonafide_scale > 0.0)) throw ConfigError("bonafide scale must be > 0");
    if (m.spoof_clusters.empty()) {
      throw ConfigError("modality '" + m.name + "' needs at least one spoof cluster");
    }
    for (const auto& c : m.spoof_clusters) {
      if (c.offset.size() != input_dim) throw ConfigError("spoof offset has wrong length");
      if (!(c.scale > 0.0)) throw ConfigError("spoof cluster scale must be > 0");
    }
  }
  ModalityTable check(std::move(names));
}

namespace {

std::vector<double> random_direction(std::mt19937_64& rng, std::size_t dim, double norm) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double nn = 0.0;
  do {
    nn = 0.0;
    for (double& x : v) {
      x = gauss(rng);
      nn += x * x;
    }
  } while (nn == 0.0);
  const double f = norm / std::sqrt(nn);
  for (double& x : v) x *= f;
  return v;
}

}  // namespace

SynthConfig SynthRecipe::build() const {
  if (modality_names.empty()) throw ConfigError("recipe needs at least one modality name");
  if (spoof_clusters == 0) throw ConfigError("spoof_clusters must be > 0");
  if (input_dim == 0) throw ConfigError("synthetic input_dim must be > 0");
  if (modality_separation < 0.0 || spoof_offset < 0.0) {
    throw ConfigError("separation and offset must be >= 0");
  }
  SynthConfig cfg;
  cfg.input_dim = input_dim;
  cfg.bonafide_per_modality = bonafide_per_modality;
  cfg.spoof_per_modality = spoof_per_modality;
  cfg.seed = seed;
  auto rng = derive_rng(seed, "synth-structure");
  for (const auto& name : modality_names) {
    SynthModality m;
    m.name = name;
    m.bonafide_mean = random_direction(rng, input_dim, modality_separation);
    m.bonafide_scale = bonafide_scale;
    for (std::size_t j = 0; j < spoof_clusters; ++j) {
      m.spoof_clusters.push_back({random_direction(rng, input_dim, spoof_offset), spoof_scale});
    }
    cfg.modalities.push_back(std::move(m));
  }
  cfg.validate();
  return cfg;
}

DatasetView gen_synthetic(const SynthConfig& cfg, std::string_view split) {
  cfg.validate();
  std::vector<std::string> names;
  for (const auto& m : cfg.modalities) names.push_back(m.name);
  ModalityTable table(std::move(names));

  std::vector<Sample> samples;
  samples.reserve(cfg.modalities.size() * (cfg.bonafide_per_modality + cfg.spoof_per_modality));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
    const SynthModality& mod = cfg.modalities[m];
    auto rng = derive_rng(cfg.seed, std::string("synth-") + std::string(split), m);
    const std::string prefix = std::string(split) + "-" + mod.name + "-";
    std::size_t n = 0;
    for (std::size_t i = 0; i < cfg.bonafide_per_modality; ++i, ++n) {
      Sample s{prefix + std::to_string(n), m, Label::bonafide, "synth-" + mod.name, {}};
      s.features.resize(cfg.input_dim);
      for (std::size_t j = 0; j < cfg.input_dim; ++j) {
        s.features[j] = mod.bonafide_mean[j] + mod.bonafide_scale * gauss(rng);
      }
      samples.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < cfg.spoof_per_modality; ++i, ++n) {
      const SpoofCluster& c = mod.spoof_clusters[i % mod.spoof_clusters.size()];
      Sample s{prefix + std::to_string(n), m, Label::spoof, "synth-" + mod.name, {}};
      s.features.resize(cfg.input_dim);
      for (std::size_t j = 0; j < cfg.input_dim; ++j) {
        s.features[j] = mod.bonafide_mean[j] + c.offset[j] + c.scale * gauss(rng);
      }
      samples.push_back(std::move(s));
    }
  }
  return DatasetView(std::move(table), cfg.input_dim, std::move(samples));
}

SynthSplit gen_synthetic_split(const SynthConfig& cfg) {
  return SynthSplit{gen_synthetic(cfg, "train"), gen_synthetic(cfg, "test")};
}

std::vector<Batch> make_balanced_batches(const DatasetView& view, std::size_t batch_size,
                                         std::uint64_t seed) {
  const std::vector<std::size_t> present = view.present_modalities();
  const std::size_t mods = present.size();
  if (mods == 0) throw ConfigError("cannot batch an empty dataset");
  if (batch_size < 2 * mods) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " gives a zero bonafide " +
                      "quota for " + std::to_string(mods) + " modalities (need >= " +
                      std::to_string(2 * mods) + ")");
  }
  for (std::size_t m : present) {
    if (view.bonafide(m).empty()) {
      throw ConfigError("modality '" + view.modalities().name(m) + "' has no bonafide samples");
    }
  }
  const std::size_t quota = batch_size / (2 * mods);
  const std::size_t spoof_slots = batch_size - quota * mods;

  auto rng = derive_rng(seed, "balanced-batches");
  std::vector<std::size_t> spoof;
  for (std::size_t m : present) {
    spoof.insert(spoof.end(), view.spoof(m).begin(), view.spoof(m).end());
  }
  std::sort(spoof.begin(), spoof.end());
  std::shuffle(spoof.begin(), spoof.end(), rng);

  struct Stream {
    std::vector<std::size_t> pool;
    std::size_t cursor = 0;
  };
  std::vector<Stream> streams;
  std::size_t n_batches = (spoof.size() + spoof_slots - 1) / spoof_slots;
  for (std::size_t m : present) {
    Stream s{view.bonafide(m), 0};
    std::shuffle(s.pool.begin(), s.pool.end(), rng);
    n_batches = std::max(n_batches, (s.pool.size() + quota - 1) / quota);
    streams.push_back(std::move(s));
  }
  n_batches = std::max<std::size_t>(n_batches, 1);

  std::vector<Batch> batches(n_batches);
  std::size_t spoof_cursor = 0;
  for (Batch& batch : batches) {
    batch.reserve(batch_size);
    for (Stream& s : streams) {
      for (std::size_t q = 0; q < quota; ++q) {
        if (s.cursor == s.pool.size()) {
          std::shuffle(s.pool.begin(), s.pool.end(), rng);
          s.cursor = 0;
        }
        batch.push_back(s.pool[s.cursor++]);
      }
    }
    const std::size_t take = std::min(spoof_slots, spoof.size() - spoof_cursor);
    batch.insert(batch.end(), spoof.begin() + spoof_cursor, spoof.begin() + spoof_cursor + take);
    spoof_cursor += take;
  }
  return batches;
}

}  // namespace litmas
