#include "dlgm/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace dlgm {

using nlohmann::json;

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

std::string hex64(std::uint64_t x) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(x));
  return hex;
}

void put_le64(std::vector<std::uint8_t>& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

std::uint64_t get_le64(const std::vector<std::uint8_t>& b, std::size_t off) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= std::uint64_t{b[off + i]} << (8 * i);
  return x;
}

struct IdxHeader {
  std::vector<std::size_t> dims;
  std::size_t payload_offset;
  std::size_t payload_size;
};

IdxHeader parse_idx_header(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw TruncatedError("IDX file shorter than its magic number");
  const std::uint32_t magic = read_be32(bytes, 0);
  std::size_t ndims;
  if (magic == 0x00000803) ndims = 3;
  else if (magic == 0x00000801) ndims = 1;
  else {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw BadMagicError(std::string("unsupported IDX magic ") + buf);
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw TruncatedError("IDX header truncated");
  IdxHeader h{{}, header, 1};
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::size_t d = read_be32(bytes, 4 + 4 * i);
    h.dims.push_back(d);
    if (d != 0 && h.payload_size > std::numeric_limits<std::size_t>::max() / d)
      throw DimOverflowError("IDX dimensions overflow");
    h.payload_size *= d;
  }
  if (h.payload_size > std::numeric_limits<std::size_t>::max() - header)
    throw DimOverflowError("IDX dimensions overflow");
  if (bytes.size() < header + h.payload_size)
    throw TruncatedError("IDX payload truncated: expected " + std::to_string(h.payload_size) + " bytes, found " +
                         std::to_string(bytes.size() - header));
  return h;
}

}  // namespace

Matrix parse_idx(const std::vector<std::uint8_t>& bytes) {
  const IdxHeader h = parse_idx_header(bytes);
  const std::size_t n = h.dims[0];
  const std::size_t d = n == 0 ? 0 : h.payload_size / n;
  Matrix m(n, h.dims.size() == 1 ? 1 : d);
  for (std::size_t i = 0; i < h.payload_size; ++i) m.data()[i] = bytes[h.payload_offset + i] / 255.0;
  return m;
}

Matrix load_idx(const std::string& path) { return parse_idx(read_file(path)); }

std::vector<std::size_t> idx_shape(const std::string& path) { return parse_idx_header(read_file(path)).dims; }

Matrix binarize(const Matrix& data, const BinarizeMode& mode) {
  Matrix out = data;
  for (double& x : out.data()) {
    if (mode.kind == BinarizeMode::Kind::threshold) {
      x = x >= mode.t ? 1.0 : 0.0;
    } else if (x != 0.0 && x != 1.0) {
      throw DataError("pre-binarized data contains a non-binary value");
    }
  }
  return out;
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

json layers_to_json(const std::vector<LayerSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) {
    if (l.kind == LayerKind::stochastic)
      arr.push_back({{"kind", "stochastic"}, {"dim", l.out_dim}, {"diagonal_noise", l.diagonal_noise}});
    else
      arr.push_back({{"kind", "deterministic"},
                     {"in", l.in_dim},
                     {"out", l.out_dim},
                     {"activation", to_string(l.activation)}});
  }
  return arr;
}

std::vector<LayerSpec> layers_from_json(const json& arr) {
  std::vector<LayerSpec> layers;
  for (const auto& j : arr) {
    if (j.at("kind") == "stochastic")
      layers.push_back(LayerSpec::stochastic(j.at("dim"), j.value("diagonal_noise", false)));
    else
      layers.push_back(LayerSpec::dense(j.at("in"), j.at("out"), activation_from_string(j.at("activation"))));
  }
  return layers;
}

void append_arrays(const ParamSet& ps, const std::string& prefix, json& manifest,
                   std::vector<std::uint8_t>& payload) {
  for (const auto& e : ps) {
    manifest["arrays"].push_back({{"name", prefix + e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}});
    put_le64(payload, e.value.size());
    for (double x : e.value.data()) put_le64(payload, std::bit_cast<std::uint64_t>(x));
  }
}

}  // namespace

void save_model(const std::string& path, const ModelFile& model) {
  model.gen.validate();
  model.rec.validate();
  json manifest;
  manifest["format_version"] = kModelFormatVersion;
  manifest["generative"] = {{"layers", layers_to_json(model.gen.layers)},
                            {"obs", to_string(model.gen.obs_family)},
                            {"kappa", model.gen.kappa}};
  manifest["recognition"] = {{"input_dim", model.rec.input_dim},
                             {"encoder", layers_to_json(model.rec.encoder)},
                             {"latent_dims", model.rec.latent_dims},
                             {"covariance_mode", to_string(model.rec.mode)}};
  manifest["seeds"] = {{"seed", model.seed}};
  manifest["training_step"] = model.training_step;
  manifest["arrays"] = json::array();

  std::vector<std::uint8_t> payload;
  append_arrays(model.gen.values, "", manifest, payload);
  append_arrays(model.rec.values, "", manifest, payload);
  if (model.opt) {
    manifest["optimizer"] = {{"rho", model.opt->rho}, {"alpha", model.opt->alpha}, {"delta", model.opt->delta}};
    append_arrays(model.opt->r, "opt.r/", manifest, payload);
  }
  manifest["payload_checksum"] = hex64(fnv1a64(payload.data(), payload.size()));

  const std::string text = manifest.dump(1);
  std::vector<std::uint8_t> bytes;
  put_le64(bytes, text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  write_file(path, bytes);
}

ModelFile load_model(const std::string& path, std::optional<CovarianceMode> expected_mode) {
  const auto bytes = read_file(path);
  if (bytes.size() < 8) throw TruncatedError("model file too short");
  const std::uint64_t mlen = get_le64(bytes, 0);
  if (mlen > bytes.size() - 8) throw TruncatedError("model manifest truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model manifest: ") + e.what());
  }
  if (manifest.value("format_version", -1) != kModelFormatVersion)
    throw FormatVersionError("unsupported model format version " + manifest.value("format_version", json()).dump());

  const std::size_t payload_off = 8 + mlen;
  const std::string hex = hex64(fnv1a64(bytes.data() + payload_off, bytes.size() - payload_off));
  if (manifest.value("payload_checksum", std::string()) != hex) throw ChecksumError("model payload checksum mismatch");

  try {
    ModelFile m;
    const json& g = manifest.at("generative");
    m.gen.layers = layers_from_json(g.at("layers"));
    m.gen.obs_family = obs_family_from_string(g.at("obs"));
    m.gen.kappa = g.at("kappa");
    const json& r = manifest.at("recognition");
    m.rec.input_dim = r.at("input_dim");
    m.rec.encoder = layers_from_json(r.at("encoder"));
    m.rec.latent_dims = r.at("latent_dims").get<std::vector<std::size_t>>();
    m.rec.mode = covariance_mode_from_string(r.at("covariance_mode"));
    if (expected_mode && *expected_mode != m.rec.mode)
      throw DataError("model covariance mode is " + to_string(m.rec.mode) + ", expected " + to_string(*expected_mode));
    m.seed = manifest.at("seeds").at("seed");
    m.training_step = manifest.at("training_step");

    ParamSet opt_r;
    std::size_t off = payload_off;
    for (const auto& a : manifest.at("arrays")) {
      const std::string name = a.at("name");
      const std::size_t rows = a.at("rows"), cols = a.at("cols");
      if (bytes.size() - off < 8) throw TruncatedError("model payload truncated");
      const std::uint64_t count = get_le64(bytes, off);
      off += 8;
      if (count != rows * cols) throw DataError("array " + name + " length disagrees with manifest");
      if ((bytes.size() - off) / 8 < count) throw TruncatedError("model payload truncated");
      Matrix mat(rows, cols);
      for (std::size_t i = 0; i < count; ++i, off += 8) mat.data()[i] = std::bit_cast<double>(get_le64(bytes, off));
      if (name.rfind("opt.r/", 0) == 0) opt_r.add(name.substr(6), std::move(mat));
      else if (name.rfind("g.", 0) == 0) m.gen.values.add(name, std::move(mat));
      else if (name.rfind("r.", 0) == 0) m.rec.values.add(name, std::move(mat));
      else throw DataError("unknown array " + name);
    }
    if (off != bytes.size()) throw DataError("trailing bytes after model payload");
    m.gen.validate();
    m.rec.validate();
    if (manifest.contains("optimizer")) {
      const json& o = manifest["optimizer"];
      m.opt = OptimizerState{std::move(opt_r), o.at("rho"), o.at("alpha"), o.at("delta")};
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model manifest: ") + e.what());
  } catch (const DimensionError& e) {
    throw DataError(std::string("model arrays inconsistent with manifest: ") + e.what());
  }
}

void emit_pgm_grid(const std::vector<Vector>& images, std::size_t height, std::size_t width, std::size_t rows,
                   std::size_t cols, const std::string& path) {
  if (images.size() > rows * cols) throw DimensionError("more images than grid cells");
  for (const auto& img : images)
    if (img.size() != height * width) throw DimensionError("inconsistent image shapes in PGM grid");
  const std::size_t w = width * cols, h = height * rows;
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const std::size_t base = bytes.size();
  bytes.resize(base + w * h, 0);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const std::size_t gr = k / cols, gc = k % cols;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double v = std::floor(images[k][y * width + x] * 255.0 + 0.5);
        const double c = std::isnan(v) ? 0.0 : std::min(255.0, std::max(0.0, v));
        bytes[base + (gr * height + y) * w + gc * width + x] = static_cast<std::uint8_t>(c);
      }
  }
  write_file(path, bytes);
}

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["minibatch"] = cfg.minibatch;
  j["steps"] = cfg.steps;
  j["alpha"] = cfg.alpha;
  j["rho"] = cfg.rho;
  j["delta"] = cfg.delta;
  j["kappa"] = cfg.kappa;
  j["init_sigma"] = cfg.init_sigma;
  j["jitter_sigma"] = cfg.jitter_sigma;
  j["corruption"] = cfg.corruption.to_string();
  j["covariance"] = to_string(cfg.covariance);
  j["seed"] = cfg.seed;
  j["early_stop"] = cfg.early_stop;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["metric_log"] = cfg.metric_log;
  j["checkpoint_path"] = cfg.checkpoint_path;
  j["latent_dims"] = cfg.latent_dims;
  j["gen_hidden"] = cfg.gen_hidden;
  j["rec_hidden"] = cfg.rec_hidden;
  j["activation"] = to_string(cfg.activation);
  j["obs"] = to_string(cfg.obs);
  return j.dump();
}

TrainConfig config_from_json(const std::string& text, TrainConfig cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "minibatch") cfg.minibatch = v.get<std::size_t>();
      else if (k == "steps") cfg.steps = v.get<std::size_t>();
      else if (k == "alpha") cfg.alpha = v.get<double>();
      else if (k == "rho") cfg.rho = v.get<double>();
      else if (k == "delta") cfg.delta = v.get<double>();
      else if (k == "kappa") cfg.kappa = v.get<double>();
      else if (k == "init_sigma") cfg.init_sigma = v.get<double>();
      else if (k == "jitter_sigma") cfg.jitter_sigma = v.get<double>();
      else if (k == "corruption") cfg.corruption = CorruptionSpec::parse(v.get<std::string>());
      else if (k == "covariance") cfg.covariance = covariance_mode_from_string(v.get<std::string>());
      else if (k == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (k == "early_stop") cfg.early_stop = v.get<bool>();
      else if (k == "checkpoint_every") cfg.checkpoint_every = v.get<std::size_t>();
      else if (k == "metric_log") cfg.metric_log = v.get<std::string>();
      else if (k == "checkpoint_path") cfg.checkpoint_path = v.get<std::string>();
      else if (k == "latent_dims") cfg.latent_dims = v.get<std::vector<std::size_t>>();
      else if (k == "gen_hidden") cfg.gen_hidden = v.get<std::vector<std::size_t>>();
      else if (k == "rec_hidden") cfg.rec_hidden = v.get<std::vector<std::size_t>>();
      else if (k == "activation") cfg.activation = activation_from_string(v.get<std::string>());
      else if (k == "obs") cfg.obs = obs_family_from_string(v.get<std::string>());
      else throw UsageError("unknown config key: " + k);
    } catch (const json::exception& e) {
      throw UsageError("config key " + k + ": " + e.what());
    }
  }
  return cfg;
}

std::string config_hash(const TrainConfig& cfg) {
  const std::string text = config_to_json(cfg);
  return hex64(fnv1a64(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& c : table.comments) out << "# " << c << '\n';
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      t.comments.push_back(line.substr(2));
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      double x = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), x);
      if (res.ec != std::errc()) throw DataError("bad CSV number: " + c);
      row.push_back(x);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace dlgm
