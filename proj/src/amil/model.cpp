#include "amil/model.hpp"

namespace amil {

std::int64_t extractor_spatial_dim(std::int64_t patch_size) {
    // conv (k=5, valid) then pool /2, twice
    std::int64_t d = patch_size;
    for (int stage = 0; stage < 2; ++stage) {
        d -= kKernelSize - 1;
        if (d < 1 || d % kPoolWindow != 0)
            throw GeometryError("patch size " + std::to_string(patch_size) +
                                " does not fit the extractor (needs patch >= 16 and patch "
                                "divisible by 4)");
        d /= kPoolWindow;
    }
    return d;
}

std::string pooling_name(PoolingMode mode) {
    switch (mode) {
        case PoolingMode::attention: return "attention";
        case PoolingMode::max: return "max";
        case PoolingMode::mean: return "mean";
    }
    throw ContractError("unknown pooling mode");
}

PoolingMode pooling_from_name(const std::string& name) {
    if (name == "attention") return PoolingMode::attention;
    if (name == "max") return PoolingMode::max;
    if (name == "mean") return PoolingMode::mean;
    throw ContractError("unknown pooling mode `" + name + "` (want attention, max or mean)");
}

}  // namespace amil
