#pragma once

#include <string>
#include <vector>

#include "screenlab/menu.hpp"
#include "screenlab/simulate.hpp"

namespace screenlab {

// Stage orchestration: solve -> simulate -> identify-* -> diagnose/deconvolve
// -> report. Stages exchange artifacts through the output directory only, so
// any stage can rerun from persisted upstream artifacts.
struct StageRecord {
    std::string name;
    bool ran = false;
    bool ok = false;
    bool skipped = false;
    double millis = 0.0;
    std::string error;
    std::vector<std::pair<std::string, std::string>> artifacts;  // path, checksum
};

struct RunManifest {
    std::string config_hash;
    std::vector<StageRecord> stages;
    std::vector<std::string> verdicts;

    std::string to_json() const;
    void write(const std::string& path) const;
};

extern const std::vector<std::string> kKnownStages;

// Validates the config (schema errors name the offending field path), executes
// the requested stages in dependency order, persists artifacts and the
// manifest into out_dir.
RunManifest run_pipeline(const std::string& config_json, const std::string& out_dir);
RunManifest run_stages(const std::string& config_json, const std::string& out_dir,
                       const std::vector<std::string>& stages);

enum class PlotKind { scatter, surface, density, trajectory };
PlotKind plot_kind_from(const std::string& name);

void emit_plot_data(const Menu& menu, PlotKind kind, const std::string& path);
void emit_plot_data(const Dataset& ds, PlotKind kind, const std::string& path);
void emit_plot_data(const std::vector<std::pair<double, double>>& trajectory, PlotKind kind,
                    const std::string& path);

}  // namespace screenlab
