#pragma once

#include <stdexcept>
#include <string>

namespace tamiseg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing files or a manifest that disagrees with the directory contents.
struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when the loss goes non-finite or the inputs cannot be trained on.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tamiseg
