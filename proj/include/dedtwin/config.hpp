#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dedtwin/grid.hpp"
#include "dedtwin/mechanics.hpp"
#include "dedtwin/surrogate.hpp"
#include "dedtwin/thermal.hpp"

namespace dedtwin {

enum class BoundaryPreset { fixture, pinned };

struct PointSpec {
    int mx = 17;
    int my = 6;
    int mz = 3;
};

struct EvalConfig {
    /// Laser power of the held-out trajectory; 0 disables it.
    double heldout_power = 800.0;
    /// Add a source-free trajectory to both trainings.
    bool no_laser = true;
    std::array<double, 3> probe{0.025, 0.0, 0.0};
    int bench_repeats = 5;
    int bench_simulator_repeats = 5;
    std::vector<int> sweep_latents{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    int sweep_epochs = 3000;  // 0 = training epochs
    /// Grid-convergence study: coarse mesh, then two factor-2 refinements.
    std::array<int, 3> richardson_coarse{20, 4, 4};
    double richardson_t_end = 2.0;
    double richardson_dt = 0.02;
};

struct RunConfig {
    std::filesystem::path material;  // empty = built-in data
    GridSpec grid;
    ThermalConfig thermal;
    bool mechanics = true;
    MechConfig mech;
    BoundaryPreset boundary = BoundaryPreset::fixture;
    PointSpec points;
    SurrogateConfig surrogate;
    TrainConfig train;
    EvalConfig eval;
    std::filesystem::path out = "out";

    /// Every setting as section.key -> canonical text value.
    std::map<std::string, std::string> to_map() const;
    void validate() const;
};

/// Flat key = value text; keys carry their section as a dotted prefix. Unknown keys are errors.
RunConfig parse_config(std::istream& in, const std::string& source = "<stream>");
RunConfig load_config(const std::filesystem::path& path);
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::string format_config(const RunConfig& cfg);

/// Preset with the full-size point set (34 x 18 x 3 = 1836 read-out points) on a refined grid.
void apply_full_scale(RunConfig& cfg);

MaterialModel load_material(const RunConfig& cfg);
MechBoundary make_boundary(const RunConfig& cfg, const StructuredGrid& grid);

}  // namespace dedtwin
