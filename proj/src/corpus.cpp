#include "synthaug/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "synthaug/errors.hpp"

namespace fs = std::filesystem;

namespace synthaug::corpus {

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

void check_id(const std::string& id) {
    if (id.empty() || id == "." || id == ".." || id.find_first_of("/\\") != std::string::npos) {
        throw std::invalid_argument("record id '" + id + "' is not usable as a file name");
    }
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    Reader(std::string_view bytes, const std::string& what) : bytes_(bytes), what_(what) {}

    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint64_t uint(int width) {
        auto s = take(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = width - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
        return v;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

// Gaussian bump centred at (cx, cy) with width s, in normalized [-1, 1] coordinates.
double bump(double u, double v, double cx, double cy, double s) {
    const double d2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
    return std::exp(-d2 / (2.0 * s * s));
}

} // namespace

std::uint8_t quantize(float x) noexcept {
    const double q = std::round((static_cast<double>(x) + 1.0) * 127.5);
    if (!(q > 0.0)) return 0; // also maps NaN to 0
    return static_cast<std::uint8_t>(std::min(q, 255.0));
}

float dequantize(std::uint8_t v) noexcept { return static_cast<float>(v / 127.5 - 1.0); }

ImageRecord to_record(const Sample& s, const std::vector<std::string>& class_names) {
    if (s.pixels.rank() != 3 || s.pixels.dim(0) != 1) {
        throw ShapeError("record '" + s.id + "' is not a single-channel image: " + shape_to_string(s.pixels.shape()));
    }
    ImageRecord r;
    r.id = s.id;
    r.class_label = class_names.at(static_cast<std::size_t>(s.label));
    r.height = static_cast<int>(s.pixels.dim(1));
    r.width = static_cast<int>(s.pixels.dim(2));
    r.pixels.reserve(s.pixels.size());
    for (float v : s.pixels.storage()) r.pixels.push_back(quantize(v));
    return r;
}

Sample from_record(const ImageRecord& r, int label, Provenance p) {
    Tensor t({1, r.height, r.width});
    for (std::size_t i = 0; i < r.pixels.size(); ++i) t[i] = dequantize(r.pixels[i]);
    return {r.id, label, std::move(t), p};
}

std::string encode_pgm(int width, int height, std::span<const std::uint8_t> pixels) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("PGM dimensions must be positive");
    if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw std::invalid_argument("PGM pixel count does not match " + std::to_string(width) + "x" + std::to_string(height));
    }
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    return out;
}

PgmImage decode_pgm(std::string_view bytes, const std::string& what) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* field) {
        skip_space();
        std::size_t start = pos;
        long long v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9' && pos - start < 9) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
        }
        if (pos == start) throw FormatError(what + ": malformed PGM header (" + field + ")");
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(what + ": not a binary PGM (P5)");
    pos = 2;
    const auto w = number("width");
    const auto h = number("height");
    const auto maxval = number("maxval");
    if (w <= 0 || h <= 0) throw FormatError(what + ": PGM dimensions must be positive");
    if (maxval != 255) throw FormatError(what + ": PGM maxval must be 255, got " + std::to_string(maxval));
    if (pos >= bytes.size() || !(bytes[pos] == ' ' || bytes[pos] == '\t' || bytes[pos] == '\n' || bytes[pos] == '\r')) {
        throw FormatError(what + ": malformed PGM header");
    }
    ++pos;
    const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - pos != n) {
        throw FormatError(what + ": expected " + std::to_string(n) + " pixel bytes, found " +
                          std::to_string(bytes.size() - pos));
    }
    PgmImage img{static_cast<int>(w), static_cast<int>(h), {}};
    img.pixels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos),
                      reinterpret_cast<const std::uint8_t*>(bytes.data() + bytes.size()));
    return img;
}

void write_pgm(const fs::path& path, int width, int height, std::span<const std::uint8_t> pixels) {
    write_file(path, encode_pgm(width, height, pixels));
}

PgmImage read_pgm(const fs::path& path) { return decode_pgm(read_file(path), path.string()); }

LabeledDataset load_corpus(const fs::path& root) {
    if (!fs::is_directory(root)) throw FormatError("corpus root " + root.string() + " is not a directory");
    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw FormatError("corpus root " + root.string() + " has no class directories");

    LabeledDataset out(classes, Provenance::original);
    int side = 0;
    for (std::size_t label = 0; label < classes.size(); ++label) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(root / classes[label])) {
            if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw FormatError("class directory " + (root / classes[label]).string() + " has no .pgm files");
        for (const auto& f : files) {
            auto img = read_pgm(f);
            if (img.width != img.height || !is_pow2(img.width)) {
                throw FormatError(f.string() + ": image is " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height) + ", expected a square power-of-two size");
            }
            if (side == 0) side = img.width;
            if (img.width != side) {
                throw FormatError(f.string() + ": image is " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height) + ", corpus uses " + std::to_string(side) + "x" +
                                  std::to_string(side));
            }
            ImageRecord r{f.stem().string(), classes[label], img.width, img.height, std::move(img.pixels)};
            try {
                out.add(from_record(r, static_cast<int>(label), Provenance::original));
            } catch (const std::invalid_argument& e) {
                throw FormatError(f.string() + ": " + e.what());
            }
        }
    }
    return out;
}

void save_corpus(const LabeledDataset& dataset, const fs::path& root) {
    for (const auto& name : dataset.class_names()) {
        check_id(name);
        fs::create_directories(root / name);
    }
    for (const auto& s : dataset.samples()) {
        check_id(s.id);
        const auto r = to_record(s, dataset.class_names());
        write_pgm(root / r.class_label / (r.id + ".pgm"), r.width, r.height, r.pixels);
    }
}

std::string encode_checkpoint(std::span<const NamedTensor> entries) {
    std::set<std::string> names;
    for (const auto& e : entries) {
        if (!names.insert(e.name).second) throw std::invalid_argument("duplicate checkpoint entry '" + e.name + "'");
    }
    std::string out = "AGB1";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
        for (auto d : e.tensor.shape()) put_u64(out, static_cast<std::uint64_t>(d));
        for (float v : e.tensor.storage()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes, const std::string& what) {
    Reader r(bytes, what);
    if (r.take(4) != "AGB1") throw FormatError(what + ": bad magic, not an AGB1 checkpoint");
    const auto version = r.uint(4);
    if (version != kCheckpointVersion) throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
    const auto count = r.uint(4);
    std::vector<NamedTensor> out;
    std::set<std::string> names;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name(r.take(r.uint(4)));
        if (!names.insert(name).second) throw FormatError(what + ": duplicate entry '" + name + "'");
        const auto ndim = r.uint(4);
        if (ndim > 16) throw FormatError(what + ": entry '" + name + "' declares " + std::to_string(ndim) + " dims");
        Shape shape;
        std::uint64_t numel = 1;
        for (std::uint64_t d = 0; d < ndim; ++d) {
            const auto dim = r.uint(8);
            if (dim == 0 || dim > (std::uint64_t{1} << 40)) throw FormatError(what + ": entry '" + name + "' has a bad dim");
            numel *= dim;
            if (numel > r.remaining()) throw FormatError(what + ": truncated data for entry '" + name + "'");
            shape.push_back(static_cast<std::int64_t>(dim));
        }
        if (numel * 4 > r.remaining()) throw FormatError(what + ": truncated data for entry '" + name + "'");
        std::vector<float> data(numel);
        for (auto& v : data) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
        out.push_back({std::move(name), ndim == 0 ? Tensor::scalar(data[0]) : Tensor(std::move(shape), std::move(data))});
    }
    if (r.remaining() != 0) throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
    return out;
}

void save_checkpoint(std::span<const NamedTensor> entries, const fs::path& path) {
    write_file(path, encode_checkpoint(entries));
}

std::vector<NamedTensor> load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

LabeledDataset generate_synthetic_corpus(int n_per_class, int size, RngStream& rng) {
    if (n_per_class < 1) throw std::invalid_argument("n_per_class must be >= 1");
    if (size < 16 || !is_pow2(size)) throw std::invalid_argument("corpus size must be a power of two >= 16");

    LabeledDataset out({"class_0", "class_1"}, Provenance::original);
    for (int label = 0; label < 2; ++label) {
        for (int i = 0; i < n_per_class; ++i) {
            // Each image draws from its own stream so (n, size, seed) fixes every byte
            // independently of generation order.
            RngStream r = rng.derive(static_cast<std::uint64_t>(label) * 1000003ULL + static_cast<std::uint64_t>(i));
            const double cx = r.uniform(-0.1, 0.1), cy = r.uniform(-0.1, 0.1);
            const double ax = r.uniform(0.55, 0.85), ay = r.uniform(0.65, 0.95);
            const double level = r.uniform(-0.6, -0.5);
            const double contrast = r.uniform(0.8, 1.0);
            struct Patch {
                double x, y, s, a;
            };
            std::vector<Patch> patches;
            if (label == 1) {
                const int k = 2 + static_cast<int>(r.below(4));
                for (int p = 0; p < k; ++p) {
                    patches.push_back({r.uniform(-0.5, 0.5), r.uniform(-0.5, 0.5), r.uniform(0.14, 0.24),
                                       r.uniform(0.25, 0.55)});
                }
            }
            Tensor img({1, size, size});
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double u = 2.0 * (x + 0.5) / size - 1.0, v = 2.0 * (y + 0.5) / size - 1.0;
                    const double rx = (u - cx) / ax, ry = (v - cy) / ay;
                    double val = level + contrast * std::max(0.0, 1.0 - (rx * rx + ry * ry));
                    for (const auto& p : patches) val += p.a * bump(u, v, p.x, p.y, p.s);
                    val += 0.04 * r.normal();
                    img[static_cast<std::size_t>(y * size + x)] = static_cast<float>(std::clamp(val, -1.0, 1.0));
                }
            }
            // Stored images are exactly representable in 8 bits.
            for (auto& v : img.storage()) v = dequantize(quantize(v));
            char id[32];
            std::snprintf(id, sizeof id, "c%d_%05d", label, i);
            out.add({id, label, std::move(img), Provenance::original});
        }
    }
    return out;
}

void write_id_list(const std::vector<std::string>& ids, const fs::path& path) {
    std::string s;
    for (const auto& id : ids) s += id + "\n";
    write_file(path, s);
}

std::vector<std::string> read_id_list(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

} // namespace synthaug::corpus
