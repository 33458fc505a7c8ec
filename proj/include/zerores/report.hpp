#pragma once
// Machine-readable run reports: a JSON summary with gated numbers plus CSV tables.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace zerores {

// One asserted number. `claim` states in words what the number is evidence for.
struct Gate {
    std::string name;
    double value = 0.0;
    std::string relation; // "<=", ">=" or "within"
    double target = 0.0;
    double tolerance = 0.0;
    std::string claim;
    bool passed = false;
};

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : cols_(header.size()) { add(header); }

    template <class... T>
    void row(const T&... cells) {
        std::vector<std::string> r;
        (r.push_back(cell(cells)), ...);
        add(r);
    }

    const std::string& text() const { return text_; }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double x) { return format_double(x); }
    static std::string cell(int x) { return std::to_string(x); }
    static std::string cell(long x) { return std::to_string(x); }
    static std::string cell(std::size_t x) { return std::to_string(x); }

    void add(const std::vector<std::string>& r) {
        if (r.size() != cols_) throw std::logic_error("csv row width mismatch");
        for (std::size_t i = 0; i < r.size(); ++i) text_ += (i ? "," : "") + r[i];
        text_ += '\n';
    }

    std::size_t cols_;
    std::string text_;
};

class Report {
public:
    explicit Report(std::string command) : command_(std::move(command)) {}

    nlohmann::ordered_json& summary() { return summary_; }
    const nlohmann::ordered_json& summary() const { return summary_; }

    Gate at_most(const std::string& name, double value, double bound, const std::string& claim) {
        return push({name, value, "<=", bound, 0.0, claim, std::isfinite(value) && value <= bound});
    }
    Gate at_least(const std::string& name, double value, double bound, const std::string& claim) {
        return push({name, value, ">=", bound, 0.0, claim, std::isfinite(value) && value >= bound});
    }
    Gate within(const std::string& name, double value, double target, double tol, const std::string& claim) {
        return push({name, value, "within", target, tol, claim, std::abs(value - target) <= tol});
    }
    // A failure that has no number attached, e.g. an exception in a stage.
    Gate failure(const std::string& name, const std::string& claim) {
        return push({name, std::nan(""), "ran", 0.0, 0.0, claim, false});
    }

    void table(const std::string& file, const CsvTable& t) { tables_[file] = t.text(); }
    void artifact(const std::string& file, const nlohmann::ordered_json& j) { tables_[file] = j.dump(2) + "\n"; }

    const std::vector<Gate>& gates() const { return gates_; }
    bool passed() const {
        for (const auto& g : gates_)
            if (!g.passed) return false;
        return true;
    }
    std::vector<std::string> failures() const {
        std::vector<std::string> f;
        for (const auto& g : gates_)
            if (!g.passed) f.push_back(g.name);
        return f;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["command"] = command_;
        j["passed"] = passed();
        nlohmann::ordered_json gates = nlohmann::ordered_json::array();
        for (const auto& g : gates_) {
            nlohmann::ordered_json e;
            e["name"] = g.name;
            e["value"] = std::isfinite(g.value) ? nlohmann::ordered_json(g.value) : nlohmann::ordered_json(nullptr);
            e["relation"] = g.relation;
            e["target"] = g.target;
            if (g.relation == "within") e["tolerance"] = g.tolerance;
            e["claim"] = g.claim;
            e["passed"] = g.passed;
            gates.push_back(e);
        }
        j["gates"] = gates;
        j["results"] = summary_;
        return j;
    }

    // Writes <command>.json and every table into dir; returns the written paths.
    std::vector<std::string> write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::vector<std::string> out;
        auto put = [&](const std::string& name, const std::string& text) {
            const auto p = dir / name;
            std::ofstream f(p, std::ios::binary);
            if (!f) throw std::runtime_error("cannot write " + p.string());
            f << text;
            out.push_back(p.string());
        };
        put(command_ + ".json", to_json().dump(2) + "\n");
        for (const auto& [name, text] : tables_) put(name, text);
        return out;
    }

private:
    Gate push(Gate g) {
        gates_.push_back(std::move(g));
        return gates_.back();
    }

    std::string command_;
    nlohmann::ordered_json summary_ = nlohmann::ordered_json::object();
    std::vector<Gate> gates_;
    std::map<std::string, std::string> tables_;
};

} // namespace zerores
