#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nkscreen/coverage.hpp"
#include "nkscreen/diffusion.hpp"
#include "nkscreen/grid_model.hpp"
#include "nkscreen/pipeline.hpp"
#include "nkscreen/surrogate.hpp"

namespace nkscreen {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);
std::string hash_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_text(const std::filesystem::path& path, const std::string& text);

Json to_json(const OperatingState& s);
OperatingState state_from_json(const Json& j);

Json to_json(const SeverityRecord& r);
SeverityRecord record_from_json(const Json& j);

std::string to_jsonl(const std::vector<Json>& rows);
std::vector<Json> parse_jsonl(const std::string& text);

Json to_json(const CaptureEstimate& e);
CaptureEstimate capture_from_json(const Json& j);

struct ScheduleParams {
    int T = 100;
    double beta_lo = 1e-4;
    double beta_hi = 0.1;
    double terminal_limit = kTerminalAlphaBarLimit;
};
Json to_json(const ScheduleParams& p);
ScheduleParams schedule_from_json(const Json& j);

/// Versioned model documents. Loading checks the format tag and version;
/// the surrogate is also checked against the case topology.
Json to_json(const EvgnnModel& m);
EvgnnModel evgnn_from_json(const Json& j, const NetworkCase& net);
Json to_json(const DenoiserModel& m);
DenoiserModel denoiser_from_json(const Json& j);

/// RFC 4180 quoting for fields containing separators or quotes.
std::string csv_field(const std::string& s);
std::string csv_number(double v);

}  // namespace nkscreen
