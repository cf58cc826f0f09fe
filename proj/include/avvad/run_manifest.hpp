// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "avvad/error.hpp"

namespace avvad {

// Every CLI invocation drops one of these next to its outputs; the snapshot
// plus seed is enough to reproduce the run.
struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    nlohmann::json inputs;
    nlohmann::json outputs;
    std::string checkpoint_hash;  // empty when no checkpoint is involved

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["command"] = command;
        j["config"] = config;
        j["seed"] = seed;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        if (!checkpoint_hash.empty()) j["checkpoint_sha256"] = checkpoint_hash;
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write run manifest: " + path);
        out << to_json().dump(2) << "\n";
    }
};

}  // namespace avvad
