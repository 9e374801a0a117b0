#pragma once

#include <stdexcept>
#include <string>

namespace amil {

// Base class for everything this library throws. The C API layer maps each
// subclass onto one amil_status code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined (matmul inner extents, aggregate
// length mismatch, ...). Message names both shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Spatial arithmetic that does not work out: non-integral conv output,
// pooling window not dividing the extent, image smaller than a patch.
struct GeometryError : Error {
    using Error::Error;
};

// Caller broke a documented precondition (empty bag, non-scalar loss, ...).
struct ContractError : Error {
    using Error::Error;
};

// Dataset files that cannot be read or parsed. Names the offending row/path.
struct IngestionError : Error {
    using Error::Error;
};

// Optimization blew up (non-finite loss or gradients). Carries diagnostics.
struct TrainingError : Error {
    using Error::Error;
};

// Filesystem problems outside dataset ingestion (checkpoints, output dirs).
struct IoError : Error {
    using Error::Error;
};

}  // namespace amil
