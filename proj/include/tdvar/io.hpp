#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "tdvar/netmodel.hpp"

namespace tdvar {

using Json = nlohmann::json;

/// Reads a feeder file (JSON, see README for keys) and validates it.
/// Impedances are converted to total ohms using each segment's length.
Feeder load_feeder(const std::filesystem::path& path);
Feeder parse_feeder(const Json& doc);
/// Writes the validated feeder back out with impedances in total ohms.
Json serialize_feeder(const Feeder& feeder);

/// Reads a transmission case file; MW/MVAr are converted to per unit.
TransmissionCase load_transmission(const std::filesystem::path& path);
TransmissionCase parse_transmission(const Json& doc);
Json serialize_transmission(const TransmissionCase& tcase);

/// Reads a `t,load,solar` CSV.
DailyProfile load_profile(const std::filesystem::path& path);
DailyProfile parse_profile(const std::string& csv_text);

std::string read_text(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

}  // namespace tdvar
