#pragma once

// ---------------------------------------------------------------------------
// Run configuration: a JSON tree of defaults addressed by dotted keys
// (apm.delta_d, meta.max_inner, ...). Files and --set overrides may only
// touch keys present in the defaults, and each value must keep the type of
// its default.
// ---------------------------------------------------------------------------

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "pcada/data.hpp"
#include "pcada/engine.hpp"

namespace pcada {

class RunConfig {
public:
    RunConfig();  // defaults

    static const nlohmann::json& defaults();
    static RunConfig from_file(const std::filesystem::path& path);

    // Deep merge of `overrides` into the tree; unknown keys or type changes throw ConfigError.
    void merge(const nlohmann::json& overrides);
    // "key=value"; value is parsed as JSON, falling back to a plain string.
    void set(std::string_view assignment);
    void set(std::string_view dotted_key, const nlohmann::json& value);
    const nlohmann::json& get(std::string_view dotted_key) const;

    std::uint64_t seed() const;
    void set_seed(std::uint64_t seed) { set("seed", nlohmann::json(seed)); }

    // Checks every module precondition; throws ConfigError naming the key.
    void validate() const;

    GeneratorConfig generator() const;
    EngineConfig engine() const;
    std::vector<std::uint64_t> ablate_seeds() const;
    std::vector<Variant> ablate_variants() const;

    const nlohmann::json& tree() const { return tree_; }

private:
    nlohmann::json tree_;
};

} // namespace pcada
