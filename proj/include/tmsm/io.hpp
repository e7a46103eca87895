#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "tmsm/cp.hpp"
#include "tmsm/estimator.hpp"
#include "tmsm/msm.hpp"
#include "tmsm/panel.hpp"
#include "tmsm/simulation.hpp"
#include "tmsm/tensor.hpp"

// Serialization: tensors and CP factors as JSON, panels and sweep tables as
// CSV. Machine-readable floats are written with 17 significant digits.

namespace tmsm::io {

using json = nlohmann::json;

json tensor_to_json(const DenseTensor3& t);
DenseTensor3 tensor_from_json(const json& j);

json cp_to_json(const CpDecomposition& cp);
CpDecomposition cp_from_json(const json& j);

json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const json& j);

json msm_to_json(const MsmFit& fit);

// Weight bundle: tensors in the tensor JSON format plus the flat weights.
json bundle_to_json(const WeightBundle& bundle);
WeightBundle bundle_from_json(const json& j);

json sim_config_to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const json& j);

// SimTruth JSON carries the config, the true CP factors and the per-cell
// truth series; the panel itself lives in the CSV artifact and is attached
// on load.
json truth_to_json(const SimTruth& truth);
SimTruth truth_from_json(const json& j, PanelData panel);

// Long-form panel CSV: header unit,period,treatment,y,l1..ld; 0-indexed
// contiguous units and periods, one row per cell.
void write_panel_csv(const PanelData& panel, const std::string& path);
PanelData read_panel_csv(const std::string& path);

void write_weights_csv(const PanelData& panel, std::span<const double> w,
                       const std::string& path);

// Reconstructed tensor slices, long form: unit,period,history,value.
void write_slices_csv(const DenseTensor3& t, const std::string& path);

void write_sweep_rows_csv(const std::vector<SweepRow>& rows, const std::string& path);
void write_sweep_cells_csv(const std::vector<SweepCell>& cells, const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

std::string format_full(double v);   // 17 significant digits
std::string format_human(double v);  // 4 significant digits

}  // namespace tmsm::io
