#include "dedtwin/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "dedtwin/error.hpp"
#include "dedtwin/text_util.hpp"

namespace dedtwin {

namespace {

// Shortest text that reads back to the same double.
std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw FormatError(key + ": expected a boolean, got '" + v + "'");
}

std::string hold_name(InputHold h) { return h == InputHold::linear ? "linear" : "zero_order"; }
std::string integrator_name(Integrator i) { return i == Integrator::rk4 ? "rk4" : "dopri5"; }

InputHold to_hold(const std::string& v, const std::string& key) {
    if (v == "linear") return InputHold::linear;
    if (v == "zero_order") return InputHold::zero_order;
    throw FormatError(key + ": expected linear or zero_order, got '" + v + "'");
}

Integrator to_integrator(const std::string& v, const std::string& key) {
    if (v == "rk4") return Integrator::rk4;
    if (v == "dopri5") return Integrator::dopri5;
    throw FormatError(key + ": expected rk4 or dopri5, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    for (const auto& w : text::split(v, ',')) {
        if (!w.empty()) out.push_back(static_cast<int>(text::to_int(w, key)));
    }
    return out;
}

std::string int_list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

// One binding per key: a reader and a writer over the same field.
struct Binding {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class Getter>
Binding real(Getter field) {
    return {[field](RunConfig& c, const std::string& v, const std::string& k) { field(c) = text::to_double(v, k); },
            [field](const RunConfig& c) { return num(field(const_cast<RunConfig&>(c))); }};
}

template <class Getter>
Binding integer(Getter field) {
    return {[field](RunConfig& c, const std::string& v, const std::string& k) {
                field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(text::to_int(v, k));
            },
            [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class Getter>
Binding boolean(Getter field) {
    return {[field](RunConfig& c, const std::string& v, const std::string& k) { field(c) = to_bool(v, k); },
            [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

const std::map<std::string, Binding>& bindings() {
    static const std::map<std::string, Binding> table = [] {
        std::map<std::string, Binding> b;
        b["material.file"] = {[](RunConfig& c, const std::string& v, const std::string&) { c.material = v; },
                              [](const RunConfig& c) { return c.material.string(); }};
        b["output.dir"] = {[](RunConfig& c, const std::string& v, const std::string&) { c.out = v; },
                           [](const RunConfig& c) { return c.out.string(); }};

        b["grid.nx"] = integer([](RunConfig& c) -> int& { return c.grid.nx; });
        b["grid.ny"] = integer([](RunConfig& c) -> int& { return c.grid.ny; });
        b["grid.nz"] = integer([](RunConfig& c) -> int& { return c.grid.nz; });
        b["grid.lx"] = real([](RunConfig& c) -> double& { return c.grid.lx; });
        b["grid.ly"] = real([](RunConfig& c) -> double& { return c.grid.ly; });
        b["grid.lz"] = real([](RunConfig& c) -> double& { return c.grid.lz; });
        b["grid.grading_y"] = real([](RunConfig& c) -> double& { return c.grid.grading_y; });
        b["grid.grading_z"] = real([](RunConfig& c) -> double& { return c.grid.grading_z; });
        b["grid.full_width"] = boolean([](RunConfig& c) -> bool& { return c.grid.full_width; });

        b["thermal.power"] = real([](RunConfig& c) -> double& { return c.thermal.power; });
        b["thermal.velocity"] = real([](RunConfig& c) -> double& { return c.thermal.velocity; });
        b["thermal.efficiency"] = real([](RunConfig& c) -> double& { return c.thermal.efficiency; });
        b["thermal.a_front"] = real([](RunConfig& c) -> double& { return c.thermal.a_front; });
        b["thermal.a_rear"] = real([](RunConfig& c) -> double& { return c.thermal.a_rear; });
        b["thermal.b"] = real([](RunConfig& c) -> double& { return c.thermal.b; });
        b["thermal.c"] = real([](RunConfig& c) -> double& { return c.thermal.c; });
        b["thermal.f_front"] = real([](RunConfig& c) -> double& { return c.thermal.f_front; });
        b["thermal.f_rear"] = real([](RunConfig& c) -> double& { return c.thermal.f_rear; });
        b["thermal.x_start"] = real([](RunConfig& c) -> double& { return c.thermal.x_start; });
        b["thermal.track_end"] = real([](RunConfig& c) -> double& { return c.thermal.track_end; });
        b["thermal.h_conv"] = real([](RunConfig& c) -> double& { return c.thermal.h_conv; });
        b["thermal.t_amb"] = real([](RunConfig& c) -> double& { return c.thermal.t_amb; });
        b["thermal.radiation"] = boolean([](RunConfig& c) -> bool& { return c.thermal.radiation; });
        b["thermal.t_end"] = real([](RunConfig& c) -> double& { return c.thermal.t_end; });
        b["thermal.dt_readout"] = real([](RunConfig& c) -> double& { return c.thermal.dt_readout; });
        b["thermal.dt_solver"] = real([](RunConfig& c) -> double& { return c.thermal.dt_solver; });
        b["thermal.picard_tol"] = real([](RunConfig& c) -> double& { return c.thermal.picard_tol; });
        b["thermal.picard_max_iters"] = integer([](RunConfig& c) -> int& { return c.thermal.picard_max_iters; });
        b["thermal.linear_tol"] = real([](RunConfig& c) -> double& { return c.thermal.linear_tol; });

        b["mech.enabled"] = boolean([](RunConfig& c) -> bool& { return c.mechanics; });
        b["mech.t_ref"] = real([](RunConfig& c) -> double& { return c.mech.t_ref; });
        b["mech.newton_rel_tol"] = real([](RunConfig& c) -> double& { return c.mech.newton_rel_tol; });
        b["mech.newton_abs_tol"] = real([](RunConfig& c) -> double& { return c.mech.newton_abs_tol; });
        b["mech.newton_max_iters"] = integer([](RunConfig& c) -> int& { return c.mech.newton_max_iters; });
        b["mech.linear_tol"] = real([](RunConfig& c) -> double& { return c.mech.linear_tol; });
        b["mech.linear_max_iters"] = integer([](RunConfig& c) -> int& { return c.mech.linear_max_iters; });
        b["mech.refactor_cg_iterations"] =
            integer([](RunConfig& c) -> int& { return c.mech.refactor_cg_iterations; });
        b["mech.roller_on_top"] = boolean([](RunConfig& c) -> bool& { return c.mech.roller_on_top; });
        b["mech.boundary"] = {[](RunConfig& c, const std::string& v, const std::string& k) {
                                  if (v == "fixture") c.boundary = BoundaryPreset::fixture;
                                  else if (v == "pinned") c.boundary = BoundaryPreset::pinned;
                                  else throw FormatError(k + ": expected fixture or pinned, got '" + v + "'");
                              },
                              [](const RunConfig& c) {
                                  return std::string(c.boundary == BoundaryPreset::fixture ? "fixture" : "pinned");
                              }};

        b["points.mx"] = integer([](RunConfig& c) -> int& { return c.points.mx; });
        b["points.my"] = integer([](RunConfig& c) -> int& { return c.points.my; });
        b["points.mz"] = integer([](RunConfig& c) -> int& { return c.points.mz; });

        b["surrogate.n_l"] = integer([](RunConfig& c) -> int& { return c.surrogate.n_l; });
        b["surrogate.encoder_hidden"] = {
            [](RunConfig& c, const std::string& v, const std::string& k) { c.surrogate.encoder_hidden = to_int_list(v, k); },
            [](const RunConfig& c) { return int_list(c.surrogate.encoder_hidden); }};
        b["surrogate.node_hidden"] = {
            [](RunConfig& c, const std::string& v, const std::string& k) { c.surrogate.node_hidden = to_int_list(v, k); },
            [](const RunConfig& c) { return int_list(c.surrogate.node_hidden); }};
        b["surrogate.train_hold"] = {
            [](RunConfig& c, const std::string& v, const std::string& k) { c.surrogate.train_hold = to_hold(v, k); },
            [](const RunConfig& c) { return hold_name(c.surrogate.train_hold); }};
        b["surrogate.infer_hold"] = {
            [](RunConfig& c, const std::string& v, const std::string& k) { c.surrogate.infer_hold = to_hold(v, k); },
            [](const RunConfig& c) { return hold_name(c.surrogate.infer_hold); }};
        b["surrogate.train_integrator"] = {[](RunConfig& c, const std::string& v, const std::string& k) {
                                               c.surrogate.train_integrator = to_integrator(v, k);
                                           },
                                           [](const RunConfig& c) { return integrator_name(c.surrogate.train_integrator); }};
        b["surrogate.infer_integrator"] = {[](RunConfig& c, const std::string& v, const std::string& k) {
                                               c.surrogate.infer_integrator = to_integrator(v, k);
                                           },
                                           [](const RunConfig& c) { return integrator_name(c.surrogate.infer_integrator); }};
        b["surrogate.rk4_substeps"] = integer([](RunConfig& c) -> int& { return c.surrogate.rk4_substeps; });
        b["surrogate.rtol"] = real([](RunConfig& c) -> double& { return c.surrogate.rtol; });
        b["surrogate.atol"] = real([](RunConfig& c) -> double& { return c.surrogate.atol; });

        b["train.epochs"] = integer([](RunConfig& c) -> int& { return c.train.epochs; });
        b["train.lr"] = real([](RunConfig& c) -> double& { return c.train.optimizer.lr; });
        b["train.lr_final"] = real([](RunConfig& c) -> double& { return c.train.lr_final; });
        b["train.beta1"] = real([](RunConfig& c) -> double& { return c.train.optimizer.beta1; });
        b["train.beta2"] = real([](RunConfig& c) -> double& { return c.train.optimizer.beta2; });
        b["train.eps"] = real([](RunConfig& c) -> double& { return c.train.optimizer.eps; });
        b["train.clip_factor"] = real([](RunConfig& c) -> double& { return c.train.clip_factor; });
        b["train.clip_floor"] = real([](RunConfig& c) -> double& { return c.train.clip_floor; });
        b["train.recon_weight"] = real([](RunConfig& c) -> double& { return c.train.recon_weight; });
        b["train.seed"] = integer([](RunConfig& c) -> std::uint64_t& { return c.train.seed; });

        b["eval.heldout_power"] = real([](RunConfig& c) -> double& { return c.eval.heldout_power; });
        b["eval.no_laser"] = boolean([](RunConfig& c) -> bool& { return c.eval.no_laser; });
        b["eval.probe_x"] = real([](RunConfig& c) -> double& { return c.eval.probe[0]; });
        b["eval.probe_y"] = real([](RunConfig& c) -> double& { return c.eval.probe[1]; });
        b["eval.probe_z"] = real([](RunConfig& c) -> double& { return c.eval.probe[2]; });
        b["eval.bench_repeats"] = integer([](RunConfig& c) -> int& { return c.eval.bench_repeats; });
        b["eval.bench_simulator_repeats"] = integer([](RunConfig& c) -> int& { return c.eval.bench_simulator_repeats; });
        b["eval.sweep_latents"] = {
            [](RunConfig& c, const std::string& v, const std::string& k) { c.eval.sweep_latents = to_int_list(v, k); },
            [](const RunConfig& c) { return int_list(c.eval.sweep_latents); }};
        b["eval.sweep_epochs"] = integer([](RunConfig& c) -> int& { return c.eval.sweep_epochs; });
        b["eval.richardson_nx"] = integer([](RunConfig& c) -> int& { return c.eval.richardson_coarse[0]; });
        b["eval.richardson_ny"] = integer([](RunConfig& c) -> int& { return c.eval.richardson_coarse[1]; });
        b["eval.richardson_nz"] = integer([](RunConfig& c) -> int& { return c.eval.richardson_coarse[2]; });
        b["eval.richardson_t_end"] = real([](RunConfig& c) -> double& { return c.eval.richardson_t_end; });
        b["eval.richardson_dt"] = real([](RunConfig& c) -> double& { return c.eval.richardson_dt; });
        return b;
    }();
    return table;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto it = bindings().find(key);
    if (it == bindings().end()) throw FormatError("unknown setting '" + key + "'");
    it->second.set(cfg, value, key);
}

std::map<std::string, std::string> RunConfig::to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, b] : bindings()) out[k] = b.get(*this);
    return out;
}

void RunConfig::validate() const {
    if (grid.nx < 1 || grid.ny < 1 || grid.nz < 1) throw InvalidInput("grid needs at least one cell per axis");
    if (!(grid.lx > 0 && grid.ly > 0 && grid.lz > 0)) throw InvalidInput("grid extents must be positive");
    thermal.validate();
    if (points.mx < 2 || points.my < 2 || points.mz < 2) throw InvalidInput("point lattice needs 2 or more per axis");
    if (points.mx > grid.nx + 1 || points.mz > grid.nz + 1 || points.my > (grid.full_width ? 2 * grid.ny : grid.ny) + 1) {
        throw InvalidInput("point lattice is finer than the grid");
    }
    if (surrogate.n_l < 1) throw InvalidInput("latent size must be positive");
    if (surrogate.rk4_substeps < 1) throw InvalidInput("rk4 substeps must be positive");
    if (train.epochs < 1) throw InvalidInput("epoch budget must be positive");
    if (!(train.optimizer.lr > 0)) throw InvalidInput("learning rate must be positive");
    if (eval.bench_repeats < 5 || eval.bench_simulator_repeats < 5) throw InvalidInput("timing needs 5 or more repeats");
    if (eval.heldout_power < 0) throw InvalidInput("held-out power must be non-negative");
    if (!material.empty() && !std::filesystem::exists(material)) {
        throw InvalidInput("material file not found: " + material.string());
    }
}

RunConfig parse_config(std::istream& in, const std::string& source) {
    RunConfig cfg;
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        const std::string body = text::trim(text::strip_comment(line));
        if (body.empty()) continue;
        const auto kv = text::split_kv(body);
        if (!kv) throw FormatError(source + ":" + std::to_string(no) + ": expected key = value");
        try {
            apply_setting(cfg, kv->first, kv->second);
        } catch (const FormatError& e) {
            throw FormatError(source + ":" + std::to_string(no) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config " + path.string());
    RunConfig cfg = parse_config(in, path.string());
    // Relative material paths are resolved against the config file.
    if (!cfg.material.empty() && cfg.material.is_relative()) cfg.material = path.parent_path() / cfg.material;
    return cfg;
}

std::string format_config(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& [k, v] : cfg.to_map()) {
        const std::string s = k.substr(0, k.find('.'));
        if (s != section) {
            if (!section.empty()) out += "\n";
            section = s;
        }
        out += k + " = " + v + "\n";
    }
    return out;
}

void apply_full_scale(RunConfig& cfg) {
    cfg.grid.nx = 100;
    cfg.grid.ny = 20;
    cfg.grid.nz = 20;
    cfg.points = {34, 18, 3};
}

MaterialModel load_material(const RunConfig& cfg) {
    return cfg.material.empty() ? MaterialModel::inconel718() : MaterialModel::load(cfg.material);
}

MechBoundary make_boundary(const RunConfig& cfg, const StructuredGrid& grid) {
    return cfg.boundary == BoundaryPreset::fixture ? MechBoundary::fixture(grid, cfg.mech.roller_on_top)
                                                   : MechBoundary::pinned(grid);
}

}  // namespace dedtwin
