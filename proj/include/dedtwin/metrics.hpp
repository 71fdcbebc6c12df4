#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dedtwin/surrogate.hpp"

namespace dedtwin {

/// Error at read-out k over the full-trajectory standard deviation.
double nrmse_at_time(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, Eigen::Index k);
/// nrmse_at_time for every k.
std::vector<double> nrmse_series(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);
double nrmse_total(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

struct RichardsonResult {
    double order = 0.0;
    double extrapolated = 0.0;
    double relative_error = 0.0;  // fine-grid value against the extrapolated one
};

RichardsonResult richardson_error(double coarse, double medium, double fine, double r = 2.0);

struct TimingStats {
    double mean = 0.0;  // seconds
    double stddev = 0.0;
    int repeats = 0;
};

/// Wall-clock statistics of `fn` over `repeats` calls (at least 5).
TimingStats time_repeats(const std::function<void()>& fn, int repeats);

struct BenchmarkReport {
    TimingStats surrogate;
    TimingStats simulator;
    double speedup = 0.0;
};

BenchmarkReport benchmark_inference(const std::function<void()>& surrogate, const std::function<void()>& simulator,
                                    int repeats, int simulator_repeats = -1);

/// Datasets shared by every cell of the latent sweep.
struct SweepData {
    Eigen::MatrixXd q;      // heat source at the read-out points
    Eigen::MatrixXd t;      // temperature
    Eigen::MatrixXd sigma;  // sigma_11
    std::uint64_t point_hash = 0;
    double dt = 0.1;
    /// Extra pairs appended to both trainings (e.g. a no-laser trajectory).
    std::vector<TrainingPair> extra_thermal;
    std::vector<TrainingPair> extra_stress;
};

struct ModelErrors {
    double q_to_t = 0.0;
    double t_to_sigma = 0.0;  // driven by the true temperature
    double q_to_sigma = 0.0;  // chained
};

ModelErrors evaluate_models(const SurrogateModel& model_t, const SurrogateModel& model_s, const SweepData& data);

struct SweepRow {
    int n_l = 0;
    ModelErrors errors;
    std::string failure;  // empty when the cell trained
};

using SweepProgress = std::function<void(const SweepRow&)>;

std::vector<SweepRow> latent_sweep(const SweepData& data, const std::vector<int>& latent_sizes,
                                   const std::vector<std::uint64_t>& seeds, const SurrogateConfig& cfg,
                                   const TrainConfig& tcfg, const SweepProgress& progress = {});

/// Best chained error among the rows that trained; 0 if none did.
int best_latent(const std::vector<SweepRow>& rows);

// Report writers.

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_y = false;
};

void write_svg_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series, const PlotSpec& spec);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
void write_sweep_svg(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

/// Flat key = value summary, keys in sorted order.
void write_summary(const std::filesystem::path& path, const std::map<std::string, std::string>& values);
std::map<std::string, std::string> read_summary(const std::filesystem::path& path);

}  // namespace dedtwin
