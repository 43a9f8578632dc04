#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "samlab/diagnostics.hpp"
#include "samlab/nn.hpp"

namespace samlab {

// Provenance carried inside a checkpoint file.
struct CheckpointMeta {
    uint64_t seed = 0;
    std::string stage;        // e.g. "pretrain", "task_2", "merge_ties"
    uint64_t base_digest = 0; // param_digest of the base this derives from; 0 for a base
};

struct LoadedCheckpoint {
    ParamVector params;
    ModelSpec spec;
    CheckpointMeta meta;
};

// JSON envelope with format_version, spec, meta, the full-precision parameter
// array, and a content digest. Parameter values round-trip bit-exactly.
// Throws IoError on unwritable paths.
void save_checkpoint(const ParamVector& params, const ModelSpec& spec, const CheckpointMeta& meta,
                     const std::string& path);

// Throws IoError on missing/truncated files, format_version mismatch, or a
// content digest that does not match the decoded payload.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Grid as CSV rows `alpha1,alpha2,value` (axis-major: alpha1 varies slowest)
// plus a JSON metadata sidecar at path + ".meta.json" carrying the metric,
// task ids, fixed coefficient, and the focus box. Values are printed with 17
// significant digits, so a re-read reproduces them bit-exactly.
void emit_grid(const GridScan& grid, const std::string& path);

// Curve as CSV rows `x,value` with the same precision guarantee; the sidecar
// records the curve kind and the non-converged point count.
void emit_curve(const Curve& curve, const std::string& path);

// Reads back a numeric CSV written by this module (or any header + all-double
// rows file): header names out, one vector per row. Throws IoError with a
// 1-based line number on malformed content.
std::vector<std::vector<double>> read_numeric_csv(const std::string& path,
                                                  std::vector<std::string>& header);

// FNV-1a over the raw bytes of a file, as a 16-digit hex string. The
// manifest lists every artifact with this digest.
std::string file_digest_hex(const std::string& path);

}  // namespace samlab
