#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "debiaslab/editors.hpp"
#include "debiaslab/protocols.hpp"

namespace debiaslab {

inline constexpr const char* kSoftwareVersion = "0.1.0";
inline constexpr const char* kEnvPrefix = "DEBIASLAB_";

// Layered key-value document: [section] headers with key = value lines.
// Environment variables named DEBIASLAB_<SECTION>_<KEY> (uppercased, '.'
// and '-' mapped to '_') override file values.
class ConfigFile {
  public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

    using EnvLookup = std::function<const char*(const std::string&)>;
    void apply_env_overrides(const EnvLookup& lookup = nullptr);

    std::optional<std::string> get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;
    void set(const std::string& section, const std::string& key, const std::string& value);
    bool has_section(const std::string& section) const;

    double get_double(const std::string& section, const std::string& key, double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    uint64_t get_u64(const std::string& section, const std::string& key, uint64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    // Canonical serialization (sorted sections and keys).
    std::string canonical() const;

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return sections_;
    }

  private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

// Resolved run configuration.
struct RunConfig {
    std::string model; // tiny config path or pretrained adapter id
    std::string dataset_path;
    std::string train_dataset_path; // IKE demonstration source
    std::string probes_path;
    std::string benchmark_path;
    std::string output_dir = "runs";
    EditorConfig editor;
    Protocol protocol = Protocol::single;
    ProtocolPlan plan;
    bool plan_from_config = false;
    TargetSelection selection = TargetSelection::none;
    std::vector<uint64_t> seeds = {0};
    bool length_normalized = false;
    bool strict_backward = false;
    bool case_insensitive_subjects = false;
    size_t knowledge_probe_count = 50;
    bool full_probes = false;
    uint64_t probe_sample_seed = 0;
    SplitRatios split_ratios;
    uint64_t split_seed = 0;
    CausalTraceConfig trace;

    // Field-level messages for everything invalid; empty means valid.
    std::vector<std::string> validate() const;
    // Content digest of the resolved configuration.
    std::string digest() const;
    std::string canonical() const;
};

// Reads the [global], [editor.<kind>] and [protocol] layers into a RunConfig.
RunConfig run_config_from_file(const ConfigFile& file, const std::string& editor_kind);

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::string started_at;
    std::string finished_at;
    std::string software_version = kSoftwareVersion;
    std::vector<uint64_t> seeds;
    std::string status = "running"; // running | completed | failed
    std::vector<std::string> artifacts; // paths relative to the run directory

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

std::string iso8601_now();

// Unique run directory under output_dir: <run_id>, <run_id>-2, ... Returns
// the created directory path.
std::string create_run_dir(const std::string& output_dir, const std::string& run_id);

} // namespace debiaslab
