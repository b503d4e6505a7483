#pragma once

#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "synthaug/tensor.hpp"

namespace synthaug {

enum class Provenance { original, train, test, synthetic_ddpm, synthetic_pggan, mixed };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct Sample {
    std::string id;
    int label = 0;
    Tensor pixels; // [C, H, W], values in [-1, 1]
    Provenance provenance = Provenance::original;
};

// Ordered (id, label, image) records sharing one geometry. Ids are unique and
// every label indexes class_names.
class LabeledDataset {
public:
    LabeledDataset() = default;
    LabeledDataset(std::vector<std::string> class_names, Provenance provenance);

    void add(Sample s);

    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    const Sample& operator[](std::size_t i) const { return samples_.at(i); }
    const std::vector<Sample>& samples() const noexcept { return samples_; }
    const std::vector<std::string>& class_names() const noexcept { return class_names_; }
    Provenance provenance() const noexcept { return provenance_; }
    void set_provenance(Provenance p) noexcept { provenance_ = p; }
    // [C, H, W] of every image; empty when the dataset is empty.
    const Shape& image_shape() const noexcept { return image_shape_; }

    int label_of(const std::string& class_name) const;
    std::size_t count(int label) const;
    std::vector<std::size_t> indices_of(int label) const;
    std::vector<std::string> ids() const;
    bool contains(const std::string& id) const { return ids_.count(id) != 0; }

    // Images at `indices` stacked into [n, C, H, W].
    Tensor images(std::span<const std::size_t> indices) const;
    Tensor images() const;
    std::vector<int> labels(std::span<const std::size_t> indices) const;

    // Records at `indices` in the given order. Record provenance is kept; the
    // subset's own provenance is `p`.
    LabeledDataset subset(std::span<const std::size_t> indices, Provenance p) const;

private:
    std::vector<std::string> class_names_;
    Provenance provenance_ = Provenance::original;
    Shape image_shape_;
    std::vector<Sample> samples_;
    std::unordered_set<std::string> ids_;
};

} // namespace synthaug
