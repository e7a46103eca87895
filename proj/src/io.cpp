#include "tmsm/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tmsm::io {

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_human(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_input("cannot open '" + path + "' for writing");
    out << content;
    if (!out) fail_input("failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_input("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json_file(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) fail_input("'" + path + "' is not valid JSON");
    return j;
}

void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

json tensor_to_json(const DenseTensor3& t) {
    json j;
    j["dims"] = {t.dims().n1, t.dims().n2, t.dims().n3};
    j["values"] = std::vector<double>(t.values().begin(), t.values().end());
    return j;
}

DenseTensor3 tensor_from_json(const json& j) {
    require(j.contains("dims") && j.contains("values"), "tensor JSON needs dims and values");
    auto dims = j.at("dims").get<std::vector<int>>();
    require(dims.size() == 3, "tensor JSON: dims must have 3 entries");
    return DenseTensor3({dims[0], dims[1], dims[2]}, j.at("values").get<std::vector<double>>());
}

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j, const char* name) {
    require(j.is_array(), std::string("CP JSON: ") + name + " must be an array of rows");
    const std::size_t rows = j.size();
    std::size_t cols = rows == 0 ? 0 : j[0].size();
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        require(j[i].size() == cols, std::string("CP JSON: ragged matrix ") + name);
        for (std::size_t c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

}  // namespace

json cp_to_json(const CpDecomposition& cp) {
    json j;
    j["rank"] = cp.rank;
    j["lambdas"] = std::vector<double>(cp.lambdas.data(), cp.lambdas.data() + cp.lambdas.size());
    j["U"] = matrix_to_json(cp.U);
    j["V"] = matrix_to_json(cp.V);
    j["Wf"] = matrix_to_json(cp.W);
    return j;
}

CpDecomposition cp_from_json(const json& j) {
    CpDecomposition cp;
    cp.rank = j.at("rank").get<int>();
    auto lam = j.at("lambdas").get<std::vector<double>>();
    require(static_cast<int>(lam.size()) == cp.rank, "CP JSON: lambda count != rank");
    cp.lambdas = Eigen::Map<const Vector>(lam.data(), lam.size());
    cp.U = matrix_from_json(j.at("U"), "U");
    cp.V = matrix_from_json(j.at("V"), "V");
    cp.W = matrix_from_json(j.at("Wf"), "Wf");
    require(cp.U.cols() == cp.rank && cp.V.cols() == cp.rank && cp.W.cols() == cp.rank,
            "CP JSON: factor column counts != rank");
    return cp;
}

json fit_to_json(const FitResult& fit) {
    json j;
    j["estimate"] = cp_to_json(fit.estimate);
    j["loss_trace"] = fit.loss_trace;
    j["iterations"] = fit.iterations;
    j["converged"] = fit.converged;
    if (std::isfinite(fit.final_completion_loss))
        j["completion_loss"] = fit.final_completion_loss;
    return j;
}

FitResult fit_from_json(const json& j) {
    FitResult fit;
    fit.estimate = cp_from_json(j.at("estimate"));
    fit.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.at("converged").get<bool>();
    if (j.contains("completion_loss")) fit.final_completion_loss = j["completion_loss"];
    fit.reconstruction = reconstruct(fit.estimate, fit.estimate.dims());
    return fit;
}

json msm_to_json(const MsmFit& fit) {
    json j;
    j["intercepts"] = fit.intercepts;
    j["betas"] = fit.betas;
    j["rank_deficient"] = fit.rank_deficient;
    return j;
}

json bundle_to_json(const WeightBundle& bundle) {
    json j;
    j["k"] = bundle.k;
    j["w"] = bundle.w;
    j["W"] = tensor_to_json(bundle.W);
    j["Yw"] = tensor_to_json(bundle.Yw);
    j["slice_probs"] = tensor_to_json(bundle.slice_probs);
    j["min_propensity"] = bundle.min_propensity;
    j["max_propensity"] = bundle.max_propensity;
    return j;
}

WeightBundle bundle_from_json(const json& j) {
    WeightBundle bundle;
    bundle.k = j.at("k").get<int>();
    bundle.w = j.at("w").get<std::vector<double>>();
    bundle.W = tensor_from_json(j.at("W"));
    bundle.Yw = tensor_from_json(j.at("Yw"));
    bundle.slice_probs = tensor_from_json(j.at("slice_probs"));
    bundle.min_propensity = j.at("min_propensity").get<double>();
    bundle.max_propensity = j.at("max_propensity").get<double>();
    require(bundle.W.same_dims(bundle.Yw) && bundle.W.same_dims(bundle.slice_probs),
            "bundle JSON: tensor dims disagree");
    return bundle;
}

json sim_config_to_json(const SimConfig& cfg) {
    json j;
    j["n_units"] = cfg.n_units;
    j["n_periods"] = cfg.n_periods;
    j["policy"] = to_string(cfg.policy);
    j["true_rank"] = cfg.true_rank;
    j["true_k"] = cfg.true_k;
    j["lambda_min"] = cfg.lambda_min;
    j["lambda_max"] = cfg.lambda_max;
    j["noise_sd"] = cfg.noise_sd;
    j["gamma"] = cfg.gamma;
    j["delta"] = cfg.delta;
    j["seed"] = cfg.seed;
    return j;
}

SimConfig sim_config_from_json(const json& j) {
    SimConfig cfg;
    cfg.n_units = j.at("n_units").get<int>();
    cfg.n_periods = j.at("n_periods").get<int>();
    cfg.policy = policy_from_string(j.at("policy").get<std::string>());
    cfg.true_rank = j.at("true_rank").get<int>();
    cfg.true_k = j.at("true_k").get<int>();
    cfg.lambda_min = j.at("lambda_min").get<double>();
    cfg.lambda_max = j.at("lambda_max").get<double>();
    cfg.noise_sd = j.at("noise_sd").get<double>();
    cfg.gamma = j.at("gamma").get<std::array<double, 4>>();
    cfg.delta = j.at("delta").get<std::array<double, 4>>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.validate();
    return cfg;
}

json truth_to_json(const SimTruth& truth) {
    json j;
    j["config"] = sim_config_to_json(truth.config);
    j["true_cp"] = cp_to_json(truth.true_cp);
    j["structural_base"] = truth.structural_base;
    j["covterm_realized"] = truth.covterm_realized;
    j["covterm_expected"] = truth.covterm_expected;
    j["tensor_term"] = truth.tensor_term;
    j["noise"] = truth.noise;
    j["true_marginal_mean"] = truth.true_marginal_mean;
    return j;
}

SimTruth truth_from_json(const json& j, PanelData panel) {
    SimTruth truth;
    truth.config = sim_config_from_json(j.at("config"));
    truth.true_cp = cp_from_json(j.at("true_cp"));
    truth.true_tensor = reconstruct(truth.true_cp, truth.true_cp.dims());
    truth.structural_base = j.at("structural_base").get<std::vector<double>>();
    truth.covterm_realized = j.at("covterm_realized").get<std::vector<double>>();
    truth.covterm_expected = j.at("covterm_expected").get<std::vector<double>>();
    truth.tensor_term = j.at("tensor_term").get<std::vector<double>>();
    truth.noise = j.at("noise").get<std::vector<double>>();
    truth.true_marginal_mean = j.at("true_marginal_mean").get<std::vector<double>>();
    panel.validate();
    require(panel.n_units == truth.config.n_units && panel.n_periods == truth.config.n_periods,
            "truth JSON does not match the panel dimensions");
    require(truth.true_marginal_mean.size() ==
                static_cast<std::size_t>(panel.n_units) * panel.n_periods,
            "truth JSON: per-cell array size mismatch");
    truth.panel = std::move(panel);
    return truth;
}

void write_panel_csv(const PanelData& panel, const std::string& path) {
    panel.validate();
    std::ostringstream out;
    out << "unit,period,treatment,y";
    for (int c = 1; c <= panel.cov_dim; ++c) out << ",l" << c;
    out << "\n";
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = 0; t < panel.n_periods; ++t) {
            out << i << ',' << t << ',' << int(panel.a(i, t)) << ',' << format_full(panel.y(i, t));
            const double* l = panel.l(i, t);
            for (int c = 0; c < panel.cov_dim; ++c) out << ',' << format_full(l[c]);
            out << "\n";
        }
    write_text_file(path, out.str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

[[noreturn]] void csv_fail(const std::string& path, std::size_t line_no, const std::string& msg) {
    fail_input(path + ":" + std::to_string(line_no) + ": " + msg);
}

double parse_double(const std::string& s, const std::string& path, std::size_t line_no,
                    const std::string& col) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        csv_fail(path, line_no, "cannot parse '" + s + "' in column " + col);
    }
}

long parse_long(const std::string& s, const std::string& path, std::size_t line_no,
                const std::string& col) {
    try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        csv_fail(path, line_no, "cannot parse '" + s + "' in column " + col);
    }
}

}  // namespace

PanelData read_panel_csv(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(in, line)) fail_input(path + ": empty file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    const std::vector<std::string> fixed{"unit", "period", "treatment", "y"};
    for (std::size_t c = 0; c < fixed.size(); ++c) {
        if (header.size() <= c || header[c] != fixed[c])
            csv_fail(path, line_no, "missing required column '" + fixed[c] + "'");
    }
    const int d = static_cast<int>(header.size()) - 4;
    for (int c = 0; c < d; ++c) {
        if (header[4 + c] != "l" + std::to_string(c + 1))
            csv_fail(path, line_no, "covariate columns must be named l1..ld, got '" +
                                        header[4 + c] + "'");
    }

    struct Row {
        long unit, period;
        int treatment;
        double y;
        std::vector<double> l;
    };
    std::vector<Row> rows;
    long max_unit = -1, max_period = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            csv_fail(path, line_no, "expected " + std::to_string(header.size()) +
                                        " fields, got " + std::to_string(fields.size()));
        Row row;
        row.unit = parse_long(fields[0], path, line_no, "unit");
        row.period = parse_long(fields[1], path, line_no, "period");
        long a = parse_long(fields[2], path, line_no, "treatment");
        if (a != 0 && a != 1) csv_fail(path, line_no, "treatment must be 0 or 1");
        row.treatment = static_cast<int>(a);
        row.y = parse_double(fields[3], path, line_no, "y");
        if (row.unit < 0 || row.period < 0) csv_fail(path, line_no, "negative unit or period");
        for (int c = 0; c < d; ++c)
            row.l.push_back(parse_double(fields[4 + c], path, line_no, "l" + std::to_string(c + 1)));
        max_unit = std::max(max_unit, row.unit);
        max_period = std::max(max_period, row.period);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail_input(path + ": no data rows");

    PanelData panel;
    panel.n_units = static_cast<int>(max_unit + 1);
    panel.n_periods = static_cast<int>(max_period + 1);
    panel.cov_dim = d;
    const std::size_t cells = static_cast<std::size_t>(panel.n_units) * panel.n_periods;
    if (rows.size() != cells)
        fail_input(path + ": got " + std::to_string(rows.size()) + " rows but units x periods = " +
                   std::to_string(cells) + " (units and periods must be 0-indexed contiguous)");
    std::vector<char> seen(cells, 0);
    panel.treatments.assign(cells, 0);
    panel.outcomes.assign(cells, 0.0);
    panel.covariates.assign(cells * d, 0.0);
    for (const auto& row : rows) {
        std::size_t c = panel.cell(static_cast<int>(row.unit), static_cast<int>(row.period));
        if (seen[c]) fail_input(path + ": duplicate cell (unit " + std::to_string(row.unit) +
                                ", period " + std::to_string(row.period) + ")");
        seen[c] = 1;
        panel.treatments[c] = static_cast<uint8_t>(row.treatment);
        panel.outcomes[c] = row.y;
        for (int cc = 0; cc < d; ++cc) panel.covariates[c * d + cc] = row.l[cc];
    }
    panel.validate();
    return panel;
}

void write_weights_csv(const PanelData& panel, std::span<const double> w,
                       const std::string& path) {
    require(w.size() == static_cast<std::size_t>(panel.n_units) * panel.n_periods,
            "write_weights_csv: size mismatch");
    std::ostringstream out;
    out << "unit,period,weight\n";
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = 0; t < panel.n_periods; ++t)
            out << i << ',' << t << ',' << format_full(w[panel.cell(i, t)]) << "\n";
    write_text_file(path, out.str());
}

void write_slices_csv(const DenseTensor3& t, const std::string& path) {
    std::ostringstream out;
    out << "unit,period,history,value\n";
    for (int i = 0; i < t.dims().n1; ++i)
        for (int j = 0; j < t.dims().n2; ++j)
            for (int p = 0; p < t.dims().n3; ++p)
                out << i << ',' << j << ',' << p << ',' << format_full(t(i, j, p)) << "\n";
    write_text_file(path, out.str());
}

void write_sweep_rows_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ostringstream out;
    out << "policy,r,k,rep,nmse,failed\n";
    for (const auto& row : rows) {
        out << to_string(row.policy) << ',' << row.rank << ',' << row.k << ',' << row.rep << ','
            << (row.failed ? "" : format_full(row.nmse)) << ',' << (row.failed ? 1 : 0) << "\n";
    }
    write_text_file(path, out.str());
}

void write_sweep_cells_csv(const std::vector<SweepCell>& cells, const std::string& path) {
    std::ostringstream out;
    out << "policy,r,k,mean_nmse,std_error,reps\n";
    for (const auto& c : cells)
        out << to_string(c.policy) << ',' << c.rank << ',' << c.k << ','
            << format_full(c.mean_nmse) << ',' << format_full(c.std_error) << ',' << c.reps
            << "\n";
    write_text_file(path, out.str());
}

}  // namespace tmsm::io
