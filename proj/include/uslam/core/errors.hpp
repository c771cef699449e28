#pragma once

#include <stdexcept>
#include <string>

namespace uslam {

struct NonPositiveDepth : std::runtime_error {
    explicit NonPositiveDepth(const std::string& msg = "depth is not positive")
        : std::runtime_error(msg) {}
};

struct BehindCamera : std::runtime_error {
    explicit BehindCamera(const std::string& msg = "point behind camera")
        : std::runtime_error(msg) {}
};

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& msg)
        : std::runtime_error(msg) {}
};

struct SingularSystem : std::runtime_error {
    explicit SingularSystem(const std::string& msg = "damping exhausted, system singular")
        : std::runtime_error(msg) {}
};

struct DisconnectedGraph : std::runtime_error {
    explicit DisconnectedGraph(const std::string& msg = "frame graph is disconnected")
        : std::runtime_error(msg) {}
};

struct InsufficientFrames : std::runtime_error {
    explicit InsufficientFrames(const std::string& msg)
        : std::runtime_error(msg) {}
};

struct MissingAnchor : std::runtime_error {
    explicit MissingAnchor(const std::string& msg)
        : std::runtime_error(msg) {}
};

struct InvalidConfig : std::runtime_error {
    explicit InvalidConfig(const std::string& msg)
        : std::runtime_error(msg) {}
};

struct DegenerateScene : std::runtime_error {
    explicit DegenerateScene(const std::string& msg)
        : std::runtime_error(msg) {}
};

struct DegenerateConfiguration : std::runtime_error {
    explicit DegenerateConfiguration(const std::string& msg)
        : std::runtime_error(msg) {}
};

struct SingleClass : std::runtime_error {
    explicit SingleClass(const std::string& msg = "both classes required")
        : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace uslam
