#include "samlab/artifacts.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "samlab/errors.hpp"

namespace samlab {

namespace {

using nlohmann::json;

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;
constexpr int kCheckpointVersion = 1;

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

uint64_t fnv1a_u64(uint64_t value, uint64_t h) { return fnv1a(&value, sizeof value, h); }

std::string hex16(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

uint64_t parse_hex16(const std::string& s, const std::string& what) {
    if (s.size() != 16) throw IoError(what + ": malformed digest field");
    uint64_t v = 0;
    for (char c : s) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else throw IoError(what + ": malformed digest field");
        v = (v << 4) | static_cast<uint64_t>(d);
    }
    return v;
}

// Covers spec, values, and meta: any byte of payload the file carries.
uint64_t checkpoint_digest(const ParamVector& params, const CheckpointMeta& meta) {
    uint64_t h = fnv1a_u64(param_digest(params), kFnvOffset);
    h = fnv1a_u64(meta.seed, h);
    h = fnv1a_u64(meta.base_digest, h);
    h = fnv1a(meta.stage.data(), meta.stage.size(), h);
    return h;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path + ": truncated or malformed JSON (" + e.what() + ")");
    }
}

const char* metric_name(GridMetric m) {
    switch (m) {
        case GridMetric::XiPair: return "xi_pair";
        case GridMetric::XiAll: return "xi_all";
        default: return "jtl_loss";
    }
}

const char* kind_name(CurveKind k) {
    switch (k) {
        case CurveKind::LossBarrier: return "loss_barrier";
        case CurveKind::EigenvalueSegment: return "eigenvalue_segment";
        default: return "jtl_gap";
    }
}

void append_g17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void save_checkpoint(const ParamVector& params, const ModelSpec& spec, const CheckpointMeta& meta,
                     const std::string& path) {
    if (params.spec_hash != spec_digest(spec))
        throw std::invalid_argument("save_checkpoint: params do not match the spec");
    if (params.values.size() != static_cast<size_t>(param_count(spec)))
        throw std::invalid_argument("save_checkpoint: parameter count mismatch");
    for (double v : params.values)
        if (!std::isfinite(v))
            throw std::invalid_argument("save_checkpoint: non-finite parameter value");

    json j;
    j["format_version"] = kCheckpointVersion;
    j["kind"] = "checkpoint";
    j["spec"] = json{{"layer_sizes", spec.layer_sizes},
                     {"activation", spec.activation == Activation::Tanh ? "tanh" : "relu"}};
    j["meta"] = json{{"seed", meta.seed},
                     {"stage", meta.stage},
                     {"base_digest", hex16(meta.base_digest)}};
    j["params"] = params.values;  // shortest round-trip decimal: re-read is bit-exact
    j["digest"] = hex16(checkpoint_digest(params, meta));
    write_text(path, j.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    json j = read_json_file(path);
    try {
        if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
            j["format_version"].get<int>() != kCheckpointVersion)
            throw IoError(path + ": unsupported checkpoint format_version");
        if (!j.contains("kind") || j["kind"].get<std::string>() != "checkpoint")
            throw IoError(path + ": not a checkpoint file");

        LoadedCheckpoint out;
        const json& spec_j = j.at("spec");
        out.spec.layer_sizes = spec_j.at("layer_sizes").get<std::vector<int>>();
        std::string act = spec_j.at("activation").get<std::string>();
        if (act == "tanh") out.spec.activation = Activation::Tanh;
        else if (act == "relu") out.spec.activation = Activation::Relu;
        else throw IoError(path + ": unknown activation '" + act + "'");

        const json& meta_j = j.at("meta");
        out.meta.seed = meta_j.at("seed").get<uint64_t>();
        out.meta.stage = meta_j.at("stage").get<std::string>();
        out.meta.base_digest = parse_hex16(meta_j.at("base_digest").get<std::string>(), path);

        out.params.values = j.at("params").get<std::vector<double>>();
        out.params.spec_hash = spec_digest(out.spec);
        if (out.params.values.size() != static_cast<size_t>(param_count(out.spec)))
            throw IoError(path + ": parameter count does not match the spec");

        uint64_t want = parse_hex16(j.at("digest").get<std::string>(), path);
        if (want != checkpoint_digest(out.params, out.meta))
            throw IoError(path + ": checkpoint digest mismatch");
        return out;
    } catch (const json::exception& e) {
        throw IoError(path + ": malformed checkpoint (" + std::string(e.what()) + ")");
    }
}

void emit_grid(const GridScan& grid, const std::string& path) {
    if (grid.values.rows != static_cast<int>(grid.alpha1_axis.size()) ||
        grid.values.cols != static_cast<int>(grid.alpha2_axis.size()))
        throw std::invalid_argument("emit_grid: axes do not match the value matrix");

    std::string body = "alpha1,alpha2,value\n";
    for (int i = 0; i < grid.values.rows; ++i) {
        for (int j = 0; j < grid.values.cols; ++j) {
            append_g17(body, grid.alpha1_axis[static_cast<size_t>(i)]);
            body += ',';
            append_g17(body, grid.alpha2_axis[static_cast<size_t>(j)]);
            body += ',';
            append_g17(body, grid.values.at(i, j));
            body += '\n';
        }
    }
    write_text(path, body);

    json meta;
    meta["metric"] = metric_name(grid.metric);
    meta["task_a"] = grid.task_a;
    meta["task_b"] = grid.task_b;
    meta["fixed_alpha"] = grid.fixed_alpha;
    meta["other_tasks"] = grid.other_tasks;
    meta["focus_box"] = json{{"lo", grid.focus_box_lo}, {"hi", grid.focus_box_hi}};
    meta["rows"] = grid.values.rows;
    meta["cols"] = grid.values.cols;
    write_text(path + ".meta.json", meta.dump(2) + "\n");
}

void emit_curve(const Curve& curve, const std::string& path) {
    if (curve.abscissa.size() != curve.values.size())
        throw std::invalid_argument("emit_curve: abscissa and values differ in length");

    std::string body = "x,value\n";
    for (size_t k = 0; k < curve.abscissa.size(); ++k) {
        append_g17(body, curve.abscissa[k]);
        body += ',';
        append_g17(body, curve.values[k]);
        body += '\n';
    }
    write_text(path, body);

    json meta;
    meta["kind"] = kind_name(curve.kind);
    meta["points"] = curve.abscissa.size();
    meta["non_converged"] = curve.non_converged;
    write_text(path + ".meta.json", meta.dump(2) + "\n");
}

std::vector<std::vector<double>> read_numeric_csv(const std::string& path,
                                                  std::vector<std::string>& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": line 1: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    header = split_fields(line);

    std::vector<std::vector<double>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;  // trailing blank line
        std::vector<std::string> fields = split_fields(line);
        if (fields.size() != header.size())
            throw IoError(path + ": line " + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields");
        std::vector<double> row;
        for (const std::string& f : fields) {
            size_t used = 0;
            double v;
            try {
                v = std::stod(f, &used);
            } catch (const std::exception&) {
                throw IoError(path + ": line " + std::to_string(line_no) + ": bad number '" + f +
                              "'");
            }
            if (used != f.size())
                throw IoError(path + ": line " + std::to_string(line_no) + ": bad number '" + f +
                              "'");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string file_digest_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    uint64_t h = kFnvOffset;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
        if (in.eof()) break;
    }
    return hex16(h);
}

}  // namespace samlab
