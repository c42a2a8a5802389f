#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlgm/generative.hpp"
#include "dlgm/recognition.hpp"
#include "dlgm/trainer.hpp"

namespace dlgm {

inline constexpr int kModelFormatVersion = 1;

// IDX file (big-endian header): 0x00000803 images (N x rows x cols) or
// 0x00000801 labels (N). Returns N x D with bytes scaled by 1/255.
// Throws BadMagicError, TruncatedError or DimOverflowError.
Matrix load_idx(const std::string& path);
Matrix parse_idx(const std::vector<std::uint8_t>& bytes);
std::vector<std::size_t> idx_shape(const std::string& path);

struct BinarizeMode {
  enum class Kind { threshold, pre_binarized };
  Kind kind = Kind::threshold;
  double t = 0.5;
};

// threshold: v >= t -> 1 else 0. pre_binarized: checks values are in {0, 1}.
Matrix binarize(const Matrix& data, const BinarizeMode& mode);

struct ModelFile {
  GenerativeParams gen;
  RecognitionParams rec;
  std::optional<OptimizerState> opt;
  std::uint64_t seed = 0;
  std::size_t training_step = 0;
};

// Layout: u64le manifest length, manifest JSON, then each array as u64le
// element count followed by that many f64le values, in manifest order. The
// manifest carries an FNV-1a 64 checksum of everything after it.
void save_model(const std::string& path, const ModelFile& model);
ModelFile load_model(const std::string& path, std::optional<CovarianceMode> expected_mode = std::nullopt);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

// Binary PGM (P5) of a rows x cols grid of height x width images with values
// in [0, 1]; each pixel is round-half-up(255 x) clamped to [0, 255], empty
// cells are black.
void emit_pgm_grid(const std::vector<Vector>& images, std::size_t height, std::size_t width, std::size_t rows,
                   std::size_t cols, const std::string& path);

// TrainConfig <-> JSON object with the same field names; corruption,
// covariance, activation and obs use their string forms. Unknown keys are a
// UsageError.
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text, TrainConfig base = {});
// fnv1a64 of config_to_json, as 16 hex digits.
std::string config_hash(const TrainConfig& cfg);

struct CsvTable {
  std::vector<std::string> comments;  // lines after "# "
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Values written with 17 significant digits so they parse back exactly.
void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);
std::string format_double(double x);

}  // namespace dlgm
