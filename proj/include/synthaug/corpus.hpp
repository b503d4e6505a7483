#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "synthaug/dataset.hpp"
#include "synthaug/nn.hpp"
#include "synthaug/rng.hpp"

namespace synthaug::corpus {

// round((x + 1) * 127.5) clamped to [0, 255].
std::uint8_t quantize(float x) noexcept;
float dequantize(std::uint8_t v) noexcept;

struct ImageRecord {
    std::string id;
    std::string class_label;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // row-major, height * width
};

ImageRecord to_record(const Sample& s, const std::vector<std::string>& class_names);
Sample from_record(const ImageRecord& r, int label, Provenance p);

struct PgmImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

// Header is exactly "P5\n<W> <H>\n255\n" followed by the raw bytes.
std::string encode_pgm(int width, int height, std::span<const std::uint8_t> pixels);
// Binary P5 with maxval 255; comments between header tokens are accepted.
PgmImage decode_pgm(std::string_view bytes, const std::string& what = "pgm");
void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> pixels);
PgmImage read_pgm(const std::filesystem::path& path);

// `<root>/<class_name>/<id>.pgm`. Classes are the sorted subdirectory names,
// ids are the file stems. Images must be square with a power-of-two side.
LabeledDataset load_corpus(const std::filesystem::path& root);
void save_corpus(const LabeledDataset& dataset, const std::filesystem::path& root);

// "AGB1" | u32 version | u32 count | per entry: u32 name_len, name bytes,
// u32 ndim, u64 dims[ndim], f32 data[prod(dims)]. All little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string encode_checkpoint(std::span<const NamedTensor> entries);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint");
void save_checkpoint(std::span<const NamedTensor> entries, const std::filesystem::path& path);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// Two-class stand-in corpus. class_0: smooth elliptical gradient plus mild
// noise; class_1: the same plus 2-5 bright Gaussian patches. Records are
// interleaved by index within class and fully determined by (n, size, rng).
LabeledDataset generate_synthetic_corpus(int n_per_class, int size, RngStream& rng);

// Writes newline-delimited ids.
void write_id_list(const std::vector<std::string>& ids, const std::filesystem::path& path);
std::vector<std::string> read_id_list(const std::filesystem::path& path);

} // namespace synthaug::corpus
