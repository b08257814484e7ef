#pragma once

// JSON configuration, JSON-Lines event logs, CSV/JSON statistics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include <openssl/evp.h>

#include "emodel/likelihood.hpp"
#include "emodel/zoo.hpp"

namespace emodel {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kEventLogFormat = "emodel-events/1";

/// Input that could not be read or parsed (config, history, event log).
class InputError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct RunConfig {
    double t0 = 0.0;
    double t_max = 1.0;
    double step = kDefaultStep;
    std::uint64_t seed = 0;
    std::size_t trajectories = 1;
    std::size_t event_budget = kDefaultEventBudget;
    std::vector<double> probe_times;
    bool snapshot_states = false;
};

/// The declarative description of a model plus its run block. Exactly one of
/// `builtin` (with `params`) or `explicit_model` is set.
struct ModelConfig {
    std::optional<std::string> builtin;
    json params = json::object();
    json explicit_model;      // {"mode"?, "sectors", "hamiltonians"?, "jumps"?}
    std::optional<json> initial;  // {"sector", "state"}
    RunConfig run;
};

struct ParsedConfig {
    ModelConfig config;
    EventModel model;
    InitialState initial;
    std::optional<ReducedModel> reduced;
    std::string hash;

    RunOptions run_options() const {
        RunOptions o;
        o.t0 = config.run.t0;
        o.t_max = config.run.t_max;
        o.step = config.run.step;
        o.event_budget = config.run.event_budget;
        o.snapshot_states = config.run.snapshot_states;
        o.probe_times = config.run.probe_times;
        return o;
    }
};

// ---------------------------------------------------------------------------
// Digest

inline std::string sha256_hex(const std::string& data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

// ---------------------------------------------------------------------------
// Matrices as row lists of [re, im] pairs

// Non-negative integer, whether the parser stored it signed or unsigned.
inline bool is_index(const json& j) {
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back({m(r, c).real(), m(r, c).imag()});
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json vector_to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back({v(i).real(), v(i).imag()});
    return out;
}

namespace detail {

inline std::optional<Complex> complex_from_json(const json& j) {
    if (j.is_number()) return Complex(j.get<double>(), 0.0);
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
        return Complex(j[0].get<double>(), j[1].get<double>());
    }
    return std::nullopt;
}

inline std::optional<Matrix> matrix_from_json(const json& j, const std::string& where, std::vector<std::string>& errors) {
    if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty()) {
        errors.push_back(where + ": matrix must be a non-empty list of rows");
        return std::nullopt;
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            errors.push_back(where + ": row " + std::to_string(r) + " has the wrong length");
            return std::nullopt;
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto z = complex_from_json(row[static_cast<std::size_t>(c)]);
            if (!z) {
                errors.push_back(where + ": entry (" + std::to_string(r) + "," + std::to_string(c) +
                                 ") is not a number or [re, im] pair");
                return std::nullopt;
            }
            m(r, c) = *z;
        }
    }
    return m;
}

inline std::optional<Vector> vector_from_json(const json& j, const std::string& where, std::vector<std::string>& errors) {
    if (!j.is_array() || j.empty()) {
        errors.push_back(where + ": state must be a non-empty list of [re, im] pairs");
        return std::nullopt;
    }
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto z = complex_from_json(j[i]);
        if (!z) {
            errors.push_back(where + ": entry " + std::to_string(i) + " is not a number or [re, im] pair");
            return std::nullopt;
        }
        v(static_cast<Eigen::Index>(i)) = *z;
    }
    return v;
}

// Provider from {"matrix": M} or {"breakpoints": [...], "matrices": [...]}.
inline std::optional<OperatorProvider> provider_from_json(const json& j, const std::string& where,
                                                          std::vector<std::string>& errors) {
    if (j.contains("matrix")) {
        auto m = matrix_from_json(j["matrix"], where, errors);
        if (!m) return std::nullopt;
        return OperatorProvider::constant(std::move(*m));
    }
    if (j.contains("matrices")) {
        if (!j.contains("breakpoints") || !j["breakpoints"].is_array()) {
            errors.push_back(where + ": piecewise operator needs a breakpoints list");
            return std::nullopt;
        }
        std::vector<double> bps;
        for (const auto& b : j["breakpoints"]) {
            if (!b.is_number()) {
                errors.push_back(where + ": breakpoints must be numbers");
                return std::nullopt;
            }
            bps.push_back(b.get<double>());
        }
        if (!j["matrices"].is_array()) {
            errors.push_back(where + ": matrices must be a list");
            return std::nullopt;
        }
        std::vector<Matrix> pieces;
        for (std::size_t i = 0; i < j["matrices"].size(); ++i) {
            auto m = matrix_from_json(j["matrices"][i], where + " piece " + std::to_string(i), errors);
            if (!m) return std::nullopt;
            pieces.push_back(std::move(*m));
        }
        return OperatorProvider::piecewise(std::move(bps), std::move(pieces));
    }
    errors.push_back(where + ": expected \"matrix\" or \"breakpoints\"+\"matrices\"");
    return std::nullopt;
}

inline json provider_to_json(const OperatorProvider& p) {
    json out = json::object();
    if (p.kind() == OperatorProvider::Kind::constant) {
        out["matrix"] = matrix_to_json(p.pieces().front());
    } else if (p.kind() == OperatorProvider::Kind::piecewise_constant) {
        out["breakpoints"] = p.breakpoints();
        json ms = json::array();
        for (const auto& m : p.pieces()) ms.push_back(matrix_to_json(m));
        out["matrices"] = std::move(ms);
    } else {
        throw PreconditionError("history-dependent providers cannot be serialized");
    }
    return out;
}

// Typed parameter reader that records errors instead of throwing.
class Params {
public:
    Params(const json& j, std::string where, std::vector<std::string>& errors)
        : j_(j.is_null() ? json::object() : j), where_(std::move(where)), errors_(errors) {
        if (!j_.is_object()) errors_.push_back(where_ + ": params must be an object");
    }

    double number(const std::string& key, double fallback) {
        seen_.push_back(key);
        if (!j_.is_object() || !j_.contains(key)) return fallback;
        if (!j_[key].is_number()) {
            errors_.push_back(where_ + ": '" + key + "' must be a number");
            return fallback;
        }
        return j_[key].get<double>();
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        seen_.push_back(key);
        if (!j_.is_object() || !j_.contains(key)) return fallback;
        if (!is_index(j_[key])) {
            errors_.push_back(where_ + ": '" + key + "' must be a non-negative integer");
            return fallback;
        }
        return j_[key].get<std::size_t>();
    }

    std::string text(const std::string& key, const std::string& fallback) {
        seen_.push_back(key);
        if (!j_.is_object() || !j_.contains(key)) return fallback;
        if (!j_[key].is_string()) {
            errors_.push_back(where_ + ": '" + key + "' must be a string");
            return fallback;
        }
        return j_[key].get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
        seen_.push_back(key);
        if (!j_.is_object() || !j_.contains(key)) return fallback;
        std::vector<double> out;
        if (!j_[key].is_array()) {
            errors_.push_back(where_ + ": '" + key + "' must be a list of numbers");
            return fallback;
        }
        for (const auto& v : j_[key]) {
            if (!v.is_number()) {
                errors_.push_back(where_ + ": '" + key + "' must be a list of numbers");
                return fallback;
            }
            out.push_back(v.get<double>());
        }
        return out;
    }

    const json* raw(const std::string& key) {
        seen_.push_back(key);
        if (!j_.is_object() || !j_.contains(key)) return nullptr;
        return &j_[key];
    }

    bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

    void reject_unknown() {
        if (!j_.is_object()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
                errors_.push_back(where_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

private:
    json j_;
    std::string where_;
    std::vector<std::string>& errors_;
    std::vector<std::string> seen_;
};

inline GrwLatticeConfig lattice_from_params(Params& p, GrwLatticeConfig c = {}) {
    c.sites = p.count("M", c.sites);
    c.spacing = p.number("a", c.spacing);
    c.sigma = p.number("sigma", c.sigma);
    c.rate = p.number("lambda", c.rate);
    c.hopping = p.number("J", c.hopping);
    c.initial = p.text("initial", c.initial);
    c.initial_site = p.count("initial_site", c.initial_site);
    c.initial_width = p.number("initial_width", c.initial_width);
    c.initial_momentum = p.number("initial_momentum", c.initial_momentum);
    return c;
}

inline std::optional<ZooModel> build_builtin(const std::string& name, const json& params,
                                             std::vector<std::string>& errors) {
    Params p(params, "builtin " + name, errors);
    std::optional<ZooModel> out;
    const std::size_t before = errors.size();
    auto guarded = [&](auto&& make) {
        try {
            out = make();
        } catch (const Error& e) {
            errors.push_back("builtin " + name + ": " + e.what());
        }
    };
    if (name == "two_sector_scalar") {
        const auto couplings = p.has("couplings") ? p.numbers("couplings", {}) : std::vector<double>{p.number("g", 1.0)};
        p.reject_unknown();
        if (errors.size() == before) guarded([&] { return build_scalar_chain(couplings); });
    } else if (name == "driven_qubit") {
        const double omega = p.number("omega", 1.0);
        const double gamma = p.number("gamma", 1.0);
        p.reject_unknown();
        if (errors.size() == before) {
            guarded([&] {
                auto r = build_driven_qubit(omega, gamma);
                Vector psi = Vector::Zero(2);
                psi(0) = 1.0;
                return ZooModel{as_event_model(r), {0, psi}, r};
            });
        }
    } else if (name == "grw_lattice") {
        const auto c = lattice_from_params(p);
        p.reject_unknown();
        for (const auto& e : c.problems()) errors.push_back("builtin grw_lattice: " + e);
        if (errors.size() == before) guarded([&] { return build_grw_zoo(c); });
    } else if (name == "momentum_weighted") {
        GrwLatticeConfig base;
        base.sites = 16;
        base.sigma = 2.0;
        auto c = lattice_from_params(p, base);
        const double kick = p.number("kick_rate", 1.0);
        p.reject_unknown();
        for (const auto& e : c.problems()) errors.push_back("builtin momentum_weighted: " + e);
        if (errors.size() == before) {
            guarded([&] {
                auto r = build_momentum_weighted(c, kick);
                return ZooModel{as_event_model(r), {0, lattice_initial_state(c)}, r};
            });
        }
    } else if (name == "noncommuting_spin") {
        const auto rates = p.numbers("rates", {1.0, 1.0});
        std::vector<std::array<double, 3>> axes{{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}};
        if (const json* a = p.raw("axes")) {
            axes.clear();
            if (!a->is_array()) {
                errors.push_back("builtin noncommuting_spin: axes must be a list of 3-vectors");
            } else {
                for (const auto& v : *a) {
                    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
                        errors.push_back("builtin noncommuting_spin: axes must be a list of 3-vectors");
                        break;
                    }
                    axes.push_back({v[0].get<double>(), v[1].get<double>(), v[2].get<double>()});
                }
            }
        }
        const double sharpness = p.number("sharpness", 1.0);
        const double omega = p.number("omega", 0.0);
        p.reject_unknown();
        if (errors.size() == before) {
            guarded([&] {
                auto r = build_noncommuting_spin(rates, axes, sharpness, omega);
                Vector psi = Vector::Zero(2);
                psi(0) = 1.0;
                return ZooModel{as_event_model(r), {0, psi}, r};
            });
        }
    } else {
        errors.push_back("unknown builtin '" + name +
                         "' (expected grw_lattice, two_sector_scalar, driven_qubit, noncommuting_spin, "
                         "momentum_weighted)");
    }
    return out;
}

inline std::optional<EventModel> explicit_model_from_json(const json& j, std::vector<std::string>& errors) {
    const std::size_t before = errors.size();
    if (!j.is_object()) {
        errors.emplace_back("model: expected an object with sectors/hamiltonians/jumps");
        return std::nullopt;
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        if (k != "mode" && k != "sectors" && k != "hamiltonians" && k != "jumps") {
            errors.push_back("model: unknown key '" + k + "'");
        }
    }
    EventModel::Mode mode = EventModel::Mode::sectored;
    if (j.contains("mode")) {
        const auto& m = j["mode"];
        if (m == "label_record") mode = EventModel::Mode::label_record;
        else if (m != "sectored") errors.emplace_back("model: mode must be \"sectored\" or \"label_record\"");
    }
    if (!j.contains("sectors") || !j["sectors"].is_array()) {
        errors.emplace_back("model: 'sectors' list is required");
        return std::nullopt;
    }
    std::vector<SectorSpec> sectors;
    for (std::size_t i = 0; i < j["sectors"].size(); ++i) {
        const auto& s = j["sectors"][i];
        const std::string where = "sector entry " + std::to_string(i);
        if (!s.is_object() || !s.contains("dim") || !is_index(s["dim"])) {
            errors.push_back(where + ": needs a positive integer 'dim'");
            continue;
        }
        SectorSpec spec;
        spec.id = s.contains("id") && is_index(s["id"]) ? s["id"].get<std::size_t>() : i;
        if (s.contains("id") && !is_index(s["id"])) errors.push_back(where + ": 'id' must be a non-negative integer");
        spec.dim = s["dim"].get<std::size_t>();
        spec.label = s.contains("label") && s["label"].is_string() ? s["label"].get<std::string>() : std::to_string(i);
        if (spec.id != i) errors.push_back(where + ": ids must be 0..n-1 in order, got " + std::to_string(spec.id));
        if (spec.dim == 0) errors.push_back(where + ": dimension must be at least 1");
        sectors.push_back(spec);
    }
    if (sectors.empty()) errors.emplace_back("model: empty sector set");
    if (errors.size() != before) return std::nullopt;

    EventModel model(sectors, mode);
    auto sector_ref = [&](const json& e, const char* key, const std::string& where) -> std::optional<SectorId> {
        if (!e.contains(key) || !is_index(e[key])) {
            errors.push_back(where + ": '" + key + "' must be a sector id");
            return std::nullopt;
        }
        const auto id = e[key].get<std::size_t>();
        if (id >= sectors.size()) {
            errors.push_back(where + ": '" + key + "' references unknown sector " + std::to_string(id));
            return std::nullopt;
        }
        return id;
    };
    if (j.contains("hamiltonians")) {
        if (!j["hamiltonians"].is_array()) errors.emplace_back("model: 'hamiltonians' must be a list");
        else {
            for (std::size_t i = 0; i < j["hamiltonians"].size(); ++i) {
                const auto& e = j["hamiltonians"][i];
                const std::string where = "hamiltonian entry " + std::to_string(i);
                const auto s = sector_ref(e, "sector", where);
                auto p = provider_from_json(e, where, errors);
                if (s && p) model.set_hamiltonian(*s, std::move(*p));
            }
        }
    }
    if (j.contains("jumps")) {
        if (!j["jumps"].is_array()) errors.emplace_back("model: 'jumps' must be a list");
        else {
            for (std::size_t i = 0; i < j["jumps"].size(); ++i) {
                const auto& e = j["jumps"][i];
                const std::string where = "jump entry " + std::to_string(i);
                const auto from = sector_ref(e, "from", where);
                const auto to = sector_ref(e, "to", where);
                auto p = provider_from_json(e, where, errors);
                const std::string label = e.contains("label") && e["label"].is_string() ? e["label"].get<std::string>() : "";
                if (from && to && p) model.add_jump(*from, *to, std::move(*p), label);
            }
        }
    }
    return model;
}

inline json explicit_model_to_json(const EventModel& m) {
    json out = json::object();
    if (m.is_label_record()) out["mode"] = "label_record";
    json sectors = json::array();
    for (const auto& s : m.sectors()) sectors.push_back({{"id", s.id}, {"dim", s.dim}, {"label", s.label}});
    out["sectors"] = std::move(sectors);
    json hs = json::array();
    for (SectorId a = 0; a < m.sector_count(); ++a) {
        json e = provider_to_json(m.hamiltonian(a));
        e["sector"] = a;
        hs.push_back(std::move(e));
    }
    out["hamiltonians"] = std::move(hs);
    json js = json::array();
    for (const auto& ch : m.channels()) {
        json e = provider_to_json(ch.op);
        e["from"] = ch.from;
        e["to"] = ch.to;
        if (!ch.label.empty()) e["label"] = ch.label;
        js.push_back(std::move(e));
    }
    out["jumps"] = std::move(js);
    return out;
}

inline RunConfig run_from_json(const json& j, std::vector<std::string>& errors) {
    RunConfig r;
    Params p(j, "run", errors);
    r.t0 = p.number("t0", r.t0);
    r.t_max = p.number("t_max", r.t_max);
    r.step = p.number("step", r.step);
    if (const json* s = p.raw("seed")) {
        if (is_index(*s)) r.seed = s->get<std::uint64_t>();
        else errors.emplace_back("run: 'seed' must be a non-negative integer");
    }
    r.trajectories = p.count("trajectories", r.trajectories);
    r.event_budget = p.count("event_budget", r.event_budget);
    r.probe_times = p.numbers("probe_times", {});
    if (const json* s = p.raw("snapshot_states")) {
        if (s->is_boolean()) r.snapshot_states = s->get<bool>();
        else errors.emplace_back("run: 'snapshot_states' must be a boolean");
    }
    p.reject_unknown();
    if (!(r.step > 0.0)) errors.emplace_back("run: step must be positive");
    if (!(r.t_max >= r.t0)) errors.emplace_back("run: t_max must not precede t0");
    if (r.trajectories == 0) errors.emplace_back("run: trajectories must be at least 1");
    if (r.event_budget == 0) errors.emplace_back("run: event_budget must be at least 1");
    for (std::size_t i = 1; i < r.probe_times.size(); ++i) {
        if (!(r.probe_times[i] > r.probe_times[i - 1])) {
            errors.emplace_back("run: probe_times must be strictly increasing");
            break;
        }
    }
    return r;
}

inline json run_to_json(const RunConfig& r) {
    return {{"t0", r.t0},
            {"t_max", r.t_max},
            {"step", r.step},
            {"seed", r.seed},
            {"trajectories", r.trajectories},
            {"event_budget", r.event_budget},
            {"probe_times", r.probe_times},
            {"snapshot_states", r.snapshot_states}};
}

} // namespace detail

inline json config_to_json(const ModelConfig& c) {
    json out = json::object();
    if (c.builtin) {
        out["builtin"] = {{"name", *c.builtin}, {"params", c.params}};
    } else {
        out["model"] = c.explicit_model;
    }
    if (c.initial) out["initial"] = *c.initial;
    out["run"] = detail::run_to_json(c.run);
    return out;
}

/// Content digest of the normalized configuration.
inline std::string config_hash(const ModelConfig& c) { return sha256_hex(config_to_json(c).dump()); }

/// Parses and validates a configuration document. Every schema and model
/// violation is collected; nothing partial is ever returned.
inline ParsedConfig parse_config_json(const json& doc) {
    std::vector<std::string> errors;
    ParsedConfig out;
    if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const auto& k = it.key();
        if (k != "builtin" && k != "model" && k != "initial" && k != "run") errors.push_back("config: unknown key '" + k + "'");
    }
    const bool has_builtin = doc.contains("builtin");
    const bool has_model = doc.contains("model");
    if (has_builtin == has_model) errors.emplace_back("config: exactly one of 'builtin' or 'model' is required");

    std::optional<ZooModel> zoo;
    std::optional<EventModel> model;
    if (has_builtin && !has_model) {
        const auto& b = doc["builtin"];
        std::string name;
        json params = json::object();
        if (b.is_string()) {
            name = b.get<std::string>();
        } else if (b.is_object() && b.contains("name") && b["name"].is_string()) {
            name = b["name"].get<std::string>();
            if (b.contains("params")) params = b["params"];
            for (auto it = b.begin(); it != b.end(); ++it) {
                if (it.key() != "name" && it.key() != "params") errors.push_back("builtin: unknown key '" + it.key() + "'");
            }
        } else {
            errors.emplace_back("builtin: expected a name or {\"name\", \"params\"}");
        }
        if (!name.empty()) {
            out.config.builtin = name;
            out.config.params = params.is_null() ? json::object() : params;
            zoo = detail::build_builtin(name, out.config.params, errors);
        }
    } else if (has_model && !has_builtin) {
        out.config.explicit_model = doc["model"];
        model = detail::explicit_model_from_json(doc["model"], errors);
    }
    out.config.run = detail::run_from_json(doc.contains("run") ? doc["run"] : json::object(), errors);

    if (zoo) {
        model = zoo->model;
        out.initial = zoo->initial;
        out.reduced = zoo->reduced;
    }
    if (model) {
        const auto report = validate_model(*model);
        errors.insert(errors.end(), report.violations.begin(), report.violations.end());
    }
    if (doc.contains("initial")) {
        out.config.initial = doc["initial"];
        const auto& init = doc["initial"];
        SectorId sector = 0;
        if (!init.is_object()) {
            errors.emplace_back("initial: expected {\"sector\", \"state\"}");
        } else {
            if (init.contains("sector")) {
                if (is_index(init["sector"])) sector = init["sector"].get<std::size_t>();
                else errors.emplace_back("initial: 'sector' must be a sector id");
            }
            if (!init.contains("state")) {
                errors.emplace_back("initial: 'state' is required");
            } else if (auto v = detail::vector_from_json(init["state"], "initial", errors); v && model) {
                if (sector >= model->sector_count()) {
                    errors.push_back("initial: unknown sector " + std::to_string(sector));
                } else if (v->size() != static_cast<Eigen::Index>(model->dim(sector))) {
                    errors.push_back("initial: state length " + std::to_string(v->size()) + " does not match sector dimension " +
                                     std::to_string(model->dim(sector)));
                } else if (!(v->norm() > 0.0)) {
                    errors.emplace_back("initial: state must be nonzero");
                } else {
                    out.initial = {sector, v->normalized()};
                }
            }
        }
    } else if (model && !zoo) {
        Vector psi = Vector::Zero(static_cast<Eigen::Index>(model->dim(0)));
        psi(0) = 1.0;
        out.initial = {0, psi};
    }

    if (!errors.empty()) {
        std::string msg = "config has " + std::to_string(errors.size()) + " problem(s):";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    out.model = std::move(*model);
    out.hash = config_hash(out.config);
    return out;
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

inline ParsedConfig parse_config(const std::filesystem::path& path) { return parse_config_json(read_json_file(path)); }

/// Explicit-form configuration for an already built model (no callbacks allowed).
inline ModelConfig explicit_config(const EventModel& m, const InitialState& init, RunConfig run = {}) {
    ModelConfig c;
    c.explicit_model = detail::explicit_model_to_json(m);
    c.initial = json{{"sector", init.sector}, {"state", vector_to_json(init.state)}};
    c.run = std::move(run);
    return c;
}

inline void write_config(const ModelConfig& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << config_to_json(c).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Event logs

struct EventLogHeader {
    std::string config_hash;
    std::uint64_t master_seed = 0;
    std::size_t trajectories = 0;
    double t0 = 0.0;
    double t_max = 0.0;
};

inline ordered_json header_json(const EventLogHeader& h) {
    ordered_json j;
    j["format"] = kEventLogFormat;
    j["config_hash"] = h.config_hash;
    j["master_seed"] = h.master_seed;
    j["trajectories"] = h.trajectories;
    j["t0"] = h.t0;
    j["t_max"] = h.t_max;
    j["rng"] = std::string(RngStream::algorithm);
    return j;
}

/// JSON-Lines: one header line, then one line per event ordered by
/// (trajectory, k). Returns the number of event lines.
inline std::size_t write_event_log(const std::vector<Trajectory>& runs, const EventLogHeader& header,
                                   std::ostream& out) {
    out << header_json(header).dump() << "\n";
    std::size_t lines = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (const auto& e : runs[i].events) {
            ordered_json j;
            j["trajectory"] = i;
            j["k"] = e.index;
            j["t"] = e.time;
            j["from"] = e.from;
            j["to"] = e.to;
            j["label"] = e.label;
            if (e.state) j["state"] = vector_to_json(*e.state);
            out << j.dump() << "\n";
            ++lines;
        }
    }
    if (!out) throw Error("event log: write failed");
    return lines;
}

inline std::size_t write_event_log(const std::vector<Trajectory>& runs, const EventLogHeader& header,
                                   const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    return write_event_log(runs, header, out);
}

struct LoggedEvent {
    std::size_t trajectory = 0;
    std::size_t k = 0;
    double time = 0.0;
    SectorId from = 0;
    SectorId to = 0;
    std::string label;
};

struct EventLog {
    std::optional<EventLogHeader> header;
    std::vector<LoggedEvent> events;
};

inline EventLog read_event_log(std::istream& in) {
    EventLog log;
    std::vector<std::string> problems;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            problems.push_back("line " + std::to_string(line_no) + ": not valid JSON");
            continue;
        }
        if (j.is_object() && j.contains("format")) {
            if (log.header || line_no != 1) {
                problems.push_back("line " + std::to_string(line_no) + ": header must be the first line");
                continue;
            }
            EventLogHeader h;
            try {
                h.config_hash = j.value("config_hash", "");
                h.master_seed = j.value("master_seed", std::uint64_t{0});
                h.trajectories = j.at("trajectories").get<std::size_t>();
                h.t0 = j.value("t0", 0.0);
                h.t_max = j.value("t_max", 0.0);
            } catch (const json::exception&) {
                problems.push_back("line " + std::to_string(line_no) + ": malformed header");
                continue;
            }
            log.header = h;
            continue;
        }
        try {
            LoggedEvent e;
            e.trajectory = j.at("trajectory").get<std::size_t>();
            e.k = j.at("k").get<std::size_t>();
            e.time = j.at("t").get<double>();
            e.from = j.at("from").get<std::size_t>();
            e.to = j.at("to").get<std::size_t>();
            e.label = j.at("label").get<std::string>();
            if (!log.events.empty()) {
                const auto& p = log.events.back();
                const bool ordered = e.trajectory > p.trajectory || (e.trajectory == p.trajectory && e.k == p.k + 1);
                if (!ordered) {
                    problems.push_back("line " + std::to_string(line_no) + ": events out of (trajectory, k) order");
                }
            }
            log.events.push_back(std::move(e));
        } catch (const json::exception&) {
            problems.push_back("line " + std::to_string(line_no) + ": malformed event record");
        }
    }
    if (!problems.empty()) {
        std::string msg = "event log has " + std::to_string(problems.size()) + " malformed line(s):";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw InputError(msg);
    }
    return log;
}

inline EventLog read_event_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path.string());
    return read_event_log(in);
}

// ---------------------------------------------------------------------------
// Statistics

struct IndexStat {
    std::size_t k = 0;
    std::size_t count = 0;
    double mean = 0.0;
    double std_error = 0.0;
};

struct StatsReport {
    std::size_t trajectories = 0;
    std::size_t events = 0;
    std::map<std::size_t, std::vector<double>> inter_event_times;  // per trajectory, in k order
    std::vector<IndexStat> mean_inter_event;                       // by event index k
    std::map<std::string, std::size_t> label_counts;
    std::map<std::size_t, std::size_t> event_count_distribution;
};

/// Inter-event statistics of a log. The first waiting time of each trajectory
/// is measured from the header's t0.
inline StatsReport stats_report(const EventLog& log) {
    StatsReport r;
    const double t0 = log.header ? log.header->t0 : 0.0;
    std::map<std::size_t, std::size_t> per_trajectory;
    std::map<std::size_t, double> last_time;
    for (const auto& e : log.events) {
        const double prev = last_time.count(e.trajectory) ? last_time[e.trajectory] : t0;
        r.inter_event_times[e.trajectory].push_back(e.time - prev);
        last_time[e.trajectory] = e.time;
        ++per_trajectory[e.trajectory];
        ++r.label_counts[e.label];
        ++r.events;
    }
    r.trajectories = log.header ? log.header->trajectories : per_trajectory.size();
    std::size_t with_events = 0;
    for (const auto& [traj, n] : per_trajectory) {
        ++r.event_count_distribution[n];
        ++with_events;
    }
    if (r.trajectories > with_events) r.event_count_distribution[0] += r.trajectories - with_events;

    std::vector<double> sum, sum_sq;
    std::vector<std::size_t> count;
    for (const auto& [traj, series] : r.inter_event_times) {
        for (std::size_t k = 0; k < series.size(); ++k) {
            if (sum.size() <= k) {
                sum.push_back(0.0);
                sum_sq.push_back(0.0);
                count.push_back(0);
            }
            sum[k] += series[k];
            sum_sq[k] += series[k] * series[k];
            ++count[k];
        }
    }
    for (std::size_t k = 0; k < sum.size(); ++k) {
        const double n = static_cast<double>(count[k]);
        const double mean = sum[k] / n;
        const double var = n > 1 ? std::max(0.0, (sum_sq[k] - n * mean * mean) / (n - 1.0)) : 0.0;
        r.mean_inter_event.push_back({k + 1, count[k], mean, std::sqrt(var / n)});
    }
    return r;
}

inline StatsReport stats_report(const std::filesystem::path& log_path) { return stats_report(read_event_log(log_path)); }

inline json stats_to_json(const StatsReport& r) {
    json mean = json::array();
    for (const auto& s : r.mean_inter_event) {
        mean.push_back({{"k", s.k}, {"count", s.count}, {"mean", s.mean}, {"std_error", s.std_error}});
    }
    json counts = json::array();
    for (const auto& [n, c] : r.event_count_distribution) counts.push_back({{"events", n}, {"trajectories", c}});
    return {{"trajectories", r.trajectories},
            {"events", r.events},
            {"mean_inter_event", mean},
            {"label_counts", r.label_counts},
            {"event_count_distribution", counts}};
}

/// report.json plus four CSV tables in `dir`.
inline void write_stats(const StatsReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f) throw Error("cannot write " + (dir / name).string());
        f << std::setprecision(17);
        return f;
    };
    {
        auto f = open("report.json");
        f << stats_to_json(r).dump(2) << "\n";
    }
    {
        auto f = open("inter_event_times.csv");
        f << "trajectory,k,dt\n";
        for (const auto& [traj, series] : r.inter_event_times) {
            for (std::size_t k = 0; k < series.size(); ++k) f << traj << "," << k + 1 << "," << series[k] << "\n";
        }
    }
    {
        auto f = open("mean_inter_event.csv");
        f << "k,count,mean,std_error\n";
        for (const auto& s : r.mean_inter_event) f << s.k << "," << s.count << "," << s.mean << "," << s.std_error << "\n";
    }
    {
        auto f = open("label_counts.csv");
        f << "label,count\n";
        for (const auto& [label, c] : r.label_counts) f << label << "," << c << "\n";
    }
    {
        auto f = open("event_counts.csv");
        f << "events,trajectories\n";
        for (const auto& [n, c] : r.event_count_distribution) f << n << "," << c << "\n";
    }
}

// ---------------------------------------------------------------------------
// Densities and likelihood inputs

inline void write_density_csv(const std::vector<double>& times, const std::vector<DirectSumDensity>& rhos,
                              const std::string& hash, std::ostream& out) {
    out << "# config_hash=" << hash << "\n";
    out << "t,sector,row,col,re,im\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < times.size(); ++i) {
        for (std::size_t s = 0; s < rhos[i].blocks.size(); ++s) {
            const Matrix& b = rhos[i].blocks[s];
            for (Eigen::Index r = 0; r < b.rows(); ++r) {
                for (Eigen::Index c = 0; c < b.cols(); ++c) {
                    out << times[i] << "," << s << "," << r << "," << c << "," << b(r, c).real() << "," << b(r, c).imag()
                        << "\n";
                }
            }
        }
    }
}

struct HistoryInput {
    EventHistory history;
    std::optional<Vector> state;
};

/// {"start": {"sector", "t"}, "steps": [{"sector", "t", "label"?}], "t_end"?, "state"?}
inline HistoryInput history_from_json(const json& j) {
    std::vector<std::string> errors;
    HistoryInput out;
    if (!j.is_object()) throw InputError("history: expected an object");
    if (j.contains("start")) {
        const auto& s = j["start"];
        if (!s.is_object()) {
            errors.emplace_back("history: 'start' must be an object");
        } else {
            if (s.contains("sector")) {
                if (is_index(s["sector"])) out.history.start_sector = s["sector"].get<std::size_t>();
                else errors.emplace_back("history: start sector must be a sector id");
            }
            if (s.contains("t")) {
                if (s["t"].is_number()) out.history.t0 = s["t"].get<double>();
                else errors.emplace_back("history: start time must be a number");
            }
        }
    }
    if (j.contains("steps")) {
        if (!j["steps"].is_array()) errors.emplace_back("history: 'steps' must be a list");
        else {
            for (std::size_t i = 0; i < j["steps"].size(); ++i) {
                const auto& s = j["steps"][i];
                if (!s.is_object() || !s.contains("sector") || !is_index(s["sector"]) || !s.contains("t") ||
                    !s["t"].is_number()) {
                    errors.push_back("history step " + std::to_string(i + 1) + ": needs 'sector' and 't'");
                    continue;
                }
                HistoryStep step{s["sector"].get<std::size_t>(), s["t"].get<double>(), ""};
                if (s.contains("label") && s["label"].is_string()) step.label = s["label"].get<std::string>();
                out.history.steps.push_back(std::move(step));
            }
        }
    }
    if (j.contains("t_end")) {
        if (j["t_end"].is_number()) out.history.t_end = j["t_end"].get<double>();
        else errors.emplace_back("history: 't_end' must be a number");
    }
    if (j.contains("state")) out.state = detail::vector_from_json(j["state"], "history state", errors);
    if (!errors.empty()) {
        std::string msg = "history has " + std::to_string(errors.size()) + " problem(s):";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw InputError(msg);
    }
    return out;
}

} // namespace emodel
