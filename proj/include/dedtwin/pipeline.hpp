#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dedtwin/config.hpp"

namespace dedtwin {

enum class Stage { simulate, mechanics, sample, train, evaluate, report, predict, bench, sweep, richardson };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);
/// simulate, mechanics, sample, train, evaluate, report.
std::vector<Stage> default_stages();

/// Scenario tags of the simulated trajectories; "main" is the training/evaluation run.
std::vector<std::string> scenarios(const RunConfig& cfg);

/// Stage records and artifact checksums of one output directory.
struct Manifest {
    struct Artifact {
        std::string stage;
        std::uint64_t hash = 0;
    };
    std::map<std::string, std::string> stage_hash;     // stage -> config fingerprint (hex)
    std::map<std::string, Artifact> artifacts;         // relative file name -> record
    std::map<std::string, std::string> values;         // timings and other facts

    static Manifest load(const std::filesystem::path& dir);  // empty when absent
    void save(const std::filesystem::path& dir) const;
};

/// Fingerprint of the settings a stage depends on, its upstream stages included.
std::uint64_t stage_fingerprint(const RunConfig& cfg, Stage s);

/// Exclusive ownership of an output directory for the lifetime of the object.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
};

struct StageOutcome {
    Stage stage;
    bool skipped = false;  // already complete for this config
    std::vector<std::string> written;
};

using Logger = std::function<void(const std::string&)>;

struct PipelineOptions {
    bool force = false;
    Logger log;
    std::filesystem::path predict_input;  // heat-source DTRJ for the predict stage; empty = main scenario
};

std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages,
                                       const PipelineOptions& opt = {});

struct VerifyResult {
    std::vector<std::string> ok;
    std::vector<std::string> corrupted;
    std::vector<std::string> missing;
    bool clean() const { return corrupted.empty() && missing.empty(); }
};

VerifyResult verify_outputs(const std::filesystem::path& dir);

/// Selector grammar: "time=K" or "time=SECONDS s", "component=C", "probe=X,Y,Z", "table".
void export_artifact(const std::filesystem::path& artifact, const std::string& format, const std::string& selector,
                     const std::filesystem::path& target);

/// Sampled heat-source density at the read-out points (n_t x n_s).
Eigen::MatrixXd sample_heat_source(const StructuredGrid& grid, const ThermalConfig& cfg, const PointSet& points,
                                   const std::vector<double>& times);

}  // namespace dedtwin
