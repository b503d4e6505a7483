#include "synthaug/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace synthaug {

std::string to_string(Provenance p) {
    switch (p) {
    case Provenance::original: return "original";
    case Provenance::train: return "train";
    case Provenance::test: return "test";
    case Provenance::synthetic_ddpm: return "synthetic-ddpm";
    case Provenance::synthetic_pggan: return "synthetic-pggan";
    case Provenance::mixed: return "mixed";
    }
    return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
    for (auto p : {Provenance::original, Provenance::train, Provenance::test, Provenance::synthetic_ddpm,
                   Provenance::synthetic_pggan, Provenance::mixed}) {
        if (to_string(p) == s) return p;
    }
    throw std::invalid_argument("unknown provenance '" + s + "'");
}

LabeledDataset::LabeledDataset(std::vector<std::string> class_names, Provenance provenance)
    : class_names_(std::move(class_names)), provenance_(provenance) {
    if (class_names_.empty()) throw std::invalid_argument("dataset needs at least one class");
}

void LabeledDataset::add(Sample s) {
    if (s.label < 0 || s.label >= static_cast<int>(class_names_.size())) {
        throw std::invalid_argument("record '" + s.id + "' has label " + std::to_string(s.label) + " outside " +
                                    std::to_string(class_names_.size()) + " classes");
    }
    if (s.pixels.rank() != 3) throw ShapeError("record '" + s.id + "' is not a [C, H, W] image");
    if (image_shape_.empty()) {
        image_shape_ = s.pixels.shape();
    } else if (s.pixels.shape() != image_shape_) {
        throw ShapeError("record '" + s.id + "' has geometry " + shape_to_string(s.pixels.shape()) + ", dataset uses " +
                         shape_to_string(image_shape_));
    }
    if (!ids_.insert(s.id).second) throw std::invalid_argument("duplicate record id '" + s.id + "'");
    samples_.push_back(std::move(s));
}

int LabeledDataset::label_of(const std::string& class_name) const {
    auto it = std::find(class_names_.begin(), class_names_.end(), class_name);
    if (it == class_names_.end()) throw std::invalid_argument("unknown class '" + class_name + "'");
    return static_cast<int>(it - class_names_.begin());
}

std::size_t LabeledDataset::count(int label) const {
    return static_cast<std::size_t>(
        std::count_if(samples_.begin(), samples_.end(), [label](const Sample& s) { return s.label == label; }));
}

std::vector<std::size_t> LabeledDataset::indices_of(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (samples_[i].label == label) out.push_back(i);
    }
    return out;
}

std::vector<std::string> LabeledDataset::ids() const {
    std::vector<std::string> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s.id);
    return out;
}

Tensor LabeledDataset::images(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw std::invalid_argument("images(): no indices");
    Shape shape = image_shape_;
    shape.insert(shape.begin(), static_cast<std::int64_t>(indices.size()));
    Tensor out(shape);
    const std::size_t per = samples_.at(indices[0]).pixels.size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto& src = samples_.at(indices[k]).pixels.storage();
        std::copy(src.begin(), src.end(), out.storage().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return out;
}

Tensor LabeledDataset::images() const {
    std::vector<std::size_t> all(samples_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return images(all);
}

std::vector<int> LabeledDataset::labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(samples_.at(i).label);
    return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices, Provenance p) const {
    LabeledDataset out(class_names_, p);
    for (auto i : indices) out.add(samples_.at(i));
    return out;
}

} // namespace synthaug
