#include "dedtwin/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dedtwin/error.hpp"
#include "dedtwin/text_util.hpp"

namespace dedtwin {

namespace {

double truth_sum_of_squares(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw DimensionMismatch("prediction and truth shapes differ");
    }
    if (truth.size() == 0) throw DegenerateData("empty trajectory");
    const double ss = (truth.array() - truth.mean()).square().sum();
    if (!(ss > 0.0)) throw DegenerateData("truth has zero variance");
    return ss;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write " + path.string());
    return out;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

double nrmse_at_time(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, Eigen::Index k) {
    const double ss = truth_sum_of_squares(pred, truth);
    if (k < 0 || k >= truth.rows()) throw InvalidInput("time index out of range");
    const double per_time = ss / static_cast<double>(truth.rows());
    return std::sqrt((pred.row(k) - truth.row(k)).squaredNorm() / per_time);
}

std::vector<double> nrmse_series(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
    const double per_time = truth_sum_of_squares(pred, truth) / static_cast<double>(truth.rows());
    std::vector<double> out(static_cast<std::size_t>(truth.rows()));
    for (Eigen::Index k = 0; k < truth.rows(); ++k) {
        out[static_cast<std::size_t>(k)] = std::sqrt((pred.row(k) - truth.row(k)).squaredNorm() / per_time);
    }
    return out;
}

double nrmse_total(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
    const double ss = truth_sum_of_squares(pred, truth);
    return std::sqrt((pred - truth).squaredNorm() / ss);
}

RichardsonResult richardson_error(double coarse, double medium, double fine, double r) {
    if (!(r > 1.0)) throw InvalidInput("refinement factor must exceed 1");
    const double d1 = coarse - medium;
    const double d2 = medium - fine;
    if (d2 == 0.0 || d1 == 0.0 || (d1 > 0.0) != (d2 > 0.0)) {
        throw ConvergenceRegimeError("triplet is not monotone: " + fmt(coarse) + ", " + fmt(medium) + ", " + fmt(fine));
    }
    RichardsonResult out;
    out.order = std::log(d1 / d2) / std::log(r);
    out.extrapolated = fine + (fine - medium) / (std::pow(r, out.order) - 1.0);
    out.relative_error = out.extrapolated != 0.0 ? std::abs(fine - out.extrapolated) / std::abs(out.extrapolated)
                                                 : std::abs(fine - out.extrapolated);
    return out;
}

TimingStats time_repeats(const std::function<void()>& fn, int repeats) {
    if (repeats < 5) throw InvalidInput("timing needs at least 5 repeats");
    std::vector<double> s;
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    TimingStats out;
    out.repeats = repeats;
    for (double v : s) out.mean += v;
    out.mean /= repeats;
    for (double v : s) out.stddev += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(out.stddev / (repeats - 1));
    return out;
}

BenchmarkReport benchmark_inference(const std::function<void()>& surrogate, const std::function<void()>& simulator,
                                    int repeats, int simulator_repeats) {
    BenchmarkReport out;
    out.surrogate = time_repeats(surrogate, repeats);
    out.simulator = time_repeats(simulator, simulator_repeats < 0 ? repeats : simulator_repeats);
    out.speedup = out.simulator.mean / out.surrogate.mean;
    return out;
}

ModelErrors evaluate_models(const SurrogateModel& model_t, const SurrogateModel& model_s, const SweepData& data) {
    ModelErrors e;
    const Eigen::VectorXd t0 = data.t.row(0).transpose();
    const ChainPrediction chain = chain_predict(model_t, model_s, data.q, t0);
    e.q_to_t = nrmse_total(chain.temperature, data.t);
    e.q_to_sigma = nrmse_total(chain.stress, data.sigma);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(data.sigma.cols());
    e.t_to_sigma = nrmse_total(model_s.predict(zero, data.t), data.sigma);
    return e;
}

std::vector<SweepRow> latent_sweep(const SweepData& data, const std::vector<int>& latent_sizes,
                                   const std::vector<std::uint64_t>& seeds, const SurrogateConfig& cfg,
                                   const TrainConfig& tcfg, const SweepProgress& progress) {
    if (!seeds.empty() && seeds.size() != latent_sizes.size() && seeds.size() != 1) {
        throw InvalidInput("give one seed or one seed per latent size");
    }
    std::vector<TrainingPair> thermal{{data.q, data.t}};
    thermal.insert(thermal.end(), data.extra_thermal.begin(), data.extra_thermal.end());
    std::vector<TrainingPair> stress{{data.t, data.sigma}};
    stress.insert(stress.end(), data.extra_stress.begin(), data.extra_stress.end());

    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < latent_sizes.size(); ++i) {
        SweepRow row;
        row.n_l = latent_sizes[i];
        try {
            if (row.n_l < 1) throw InvalidInput("latent size must be positive");
            SurrogateConfig c = cfg;
            c.n_l = row.n_l;
            TrainConfig t = tcfg;
            if (!seeds.empty()) t.seed = seeds.size() == 1 ? seeds[0] : seeds[i];
            const TrainResult rt = train_surrogate(thermal, data.point_hash, data.dt, c, t);
            const TrainResult rs = train_surrogate(stress, data.point_hash, data.dt, c, t);
            row.errors = evaluate_models(rt.model, rs.model, data);
        } catch (const Error& e) {
            row.failure = e.what();
        }
        if (progress) progress(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

int best_latent(const std::vector<SweepRow>& rows) {
    int best = 0;
    double err = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
        if (r.failure.empty() && r.errors.q_to_sigma < err) {
            err = r.errors.q_to_sigma;
            best = r.n_l;
        }
    }
    return best;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns) {
    if (header.size() != columns.size()) throw DimensionMismatch("header and column counts differ");
    std::size_t n = columns.empty() ? 0 : columns.front().size();
    for (const auto& c : columns) {
        if (c.size() != n) throw DimensionMismatch("CSV columns have different lengths");
    }
    auto out = open_out(path);
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    out << "\n" << std::setprecision(12);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << columns[j][i];
        out << "\n";
    }
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    auto out = open_out(path);
    out << "n_l,q_to_t,t_to_sigma,q_to_sigma,failure\n" << std::setprecision(12);
    for (const auto& r : rows) {
        out << r.n_l << ",";
        if (r.failure.empty()) {
            out << r.errors.q_to_t << "," << r.errors.t_to_sigma << "," << r.errors.q_to_sigma << ",";
        } else {
            std::string f = r.failure;
            std::replace(f.begin(), f.end(), ',', ';');
            std::replace(f.begin(), f.end(), '\n', ' ');
            out << ",,," << f;
        }
        out << "\n";
    }
}

void write_sweep_svg(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    PlotSeries qt{"Q->T", {}, {}}, ts{"T->sigma", {}, {}}, qs{"Q->sigma (chain)", {}, {}};
    for (const auto& r : rows) {
        if (!r.failure.empty()) continue;
        for (PlotSeries* s : {&qt, &ts, &qs}) s->x.push_back(r.n_l);
        qt.y.push_back(r.errors.q_to_t);
        ts.y.push_back(r.errors.t_to_sigma);
        qs.y.push_back(r.errors.q_to_sigma);
    }
    write_svg_plot(path, {qt, ts, qs}, {"NRMSE per latent size", "latent dimension n_l", "NRMSE", true});
}

void write_svg_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series, const PlotSpec& spec) {
    constexpr double W = 640, H = 420, L = 70, R = 160, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto ty = [&](double v) { return spec.log_y ? std::log10(std::max(v, 1e-300)) : v; };
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw DimensionMismatch("plot series '" + s.label + "' has mismatched axes");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (spec.log_y && !(s.y[i] > 0.0)) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    if (spec.log_y) y0 = std::floor(y0), y1 = std::ceil(y1);
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    auto out = open_out(path);
    out << std::setprecision(6);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(spec.title)
        << "</text>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0;
        out << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
            << xv << "</text>\n";
    }
    const int yticks = spec.log_y ? static_cast<int>(y1 - y0) : 4;
    for (int i = 0; i <= yticks; ++i) {
        const double yv = y0 + (y1 - y0) * i / yticks;
        const double label = spec.log_y ? std::pow(10.0, yv) : yv;
        const double yy = H - B - (yv - y0) / (y1 - y0) * (H - T - B);
        out << "<text x=\"" << L - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << label
            << "</text>\n";
    }
    out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
        << xml_escape(spec.x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
        << ")\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(spec.y_label) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* c = colors[s % 6];
        out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            if (spec.log_y && !(series[s].y[i] > 0.0)) continue;
            out << px(series[s].x[i]) << "," << py(series[s].y[i]) << " ";
        }
        out << "\"/>\n";
        const double ly = T + 16 + 18 * static_cast<double>(s);
        out << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
            << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
            << xml_escape(series[s].label) << "</text>\n";
    }
    out << "</svg>\n";
}

void write_summary(const std::filesystem::path& path, const std::map<std::string, std::string>& values) {
    auto out = open_out(path);
    for (const auto& [k, v] : values) out << k << " = " << v << "\n";
}

std::map<std::string, std::string> read_summary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot read " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (auto kv = text::split_kv(text::strip_comment(line))) out[kv->first] = kv->second;
    }
    return out;
}

}  // namespace dedtwin
