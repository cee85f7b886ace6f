#pragma once

// In-memory collection of per-image patch embeddings.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "comfe/errors.hpp"
#include "comfe/losses.hpp"
#include "comfe/tensor.hpp"

namespace comfe {

struct EmbeddedImage {
    std::uint32_t label = 0;
    Tensor<float> view;                   // N_Z × d
    std::optional<Tensor<float>> paired;  // second view, same patch indexing
};

struct EmbeddingDataset {
    std::size_t num_classes = 0;
    std::size_t n_patches = 0;
    std::size_t dim = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t views = 1;
    std::vector<EmbeddedImage> images;

    std::size_t size() const { return images.size(); }

    ExampleRef<float> example(std::size_t i) const {
        const auto &img = images.at(i);
        return {&img.view, img.paired ? &*img.paired : nullptr, img.label};
    }

    void validate() const {
        if (grid_h * grid_w != n_patches) {
            throw DataError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " does not cover " +
                            std::to_string(n_patches) + " patches");
        }
        if (views != 1 && views != 2) throw DataError("views must be 1 or 2");
        for (std::size_t i = 0; i < images.size(); ++i) {
            const auto &img = images[i];
            const Shape want{n_patches, dim};
            if (img.view.shape() != want) {
                throw DataError("image " + std::to_string(i) + " has shape " + shape_str(img.view.shape()) +
                                ", expected " + shape_str(want));
            }
            if ((views == 2) != img.paired.has_value()) {
                throw DataError("image " + std::to_string(i) + " view count disagrees with dataset");
            }
            if (img.paired && img.paired->shape() != want) {
                throw DataError("image " + std::to_string(i) + " paired view has wrong shape");
            }
            if (img.label >= num_classes) {
                throw DataError("image " + std::to_string(i) + " label " + std::to_string(img.label) +
                                " outside label space of " + std::to_string(num_classes));
            }
        }
    }
};

// Ground-truth informative-patch masks, one row per image (1 = informative).
struct PatchMasks {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<std::vector<std::uint8_t>> masks;
};

}  // namespace comfe
