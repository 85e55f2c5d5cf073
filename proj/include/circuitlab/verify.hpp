#pragma once

// Property checks of the patching engine against the in-process toy model.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "circuitlab/toy_model.hpp"

namespace circuitlab {

struct VerifyCheck {
    std::string name;
    bool passed = false;
    std::string detail;  // measured value or failure reason
    double seconds = 0.0;
};

struct VerifyOptions {
    ToyConfig config;
    std::uint64_t seed = 0;  // drives the prompts and pairs
    int pairs = 3;           // per corruption kind
    bool loopback = true;    // also run the HTTP round trip on 127.0.0.1
};

// Runs every check; a throwing check counts as failed. on_check is called as
// each one finishes.
std::vector<VerifyCheck> toy_verify(const VerifyOptions& options = {},
                                    const std::function<void(const VerifyCheck&)>& on_check = {});

}  // namespace circuitlab
