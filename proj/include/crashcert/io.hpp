#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crashcert/experiments.hpp"
#include "crashcert/network.hpp"

namespace crashcert {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr int kModelFormatVersion = 1;

/// {"layers": [{"weights": [[...]], "bias": [...], "activation": "..."}], "meta": {...}}.
/// Doubles are written in shortest round-trip form, so read(write(net)) is bit-exact.
std::string model_to_json(const Network& net);

/// Throws SchemaError naming the offending field, e.g. "layers[1].weights[2][0]".
Network model_from_json(std::string_view text);

void write_model(const Network& net, const std::filesystem::path& path);
Network read_model(const std::filesystem::path& path);

/// CSV with a header row: feature columns then target columns. `input_dim`
/// splits the columns; without it the last column is the single target.
/// Throws SchemaError naming the line for ragged rows and bad values.
Dataset parse_csv_dataset(std::string_view text, std::optional<Index> input_dim, std::string_view source = "<csv>");

/// A path to a CSV file or a "synth:KIND[:n[:noise[:seed]]]" spec.
Dataset read_dataset(const std::string& source, std::optional<Index> input_dim = std::nullopt);

/// Comma-separated doubles ("0.05" or "0.05,0,0"). Throws SchemaError.
std::vector<double> parse_double_list(std::string_view text);

/// Header row plus one line per row, 17 significant digits.
std::string table_to_csv(const Table& table);

enum class ReportFormat { json, csv };

/// json: the document goes to `path`. csv: the document goes to `path` with
/// a .json extension and every table to "<stem>.<table>.csv" next to it.
/// Returns the files written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& path, std::string_view document_json,
                                                const std::vector<Table>& tables, ReportFormat format);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

} // namespace crashcert
