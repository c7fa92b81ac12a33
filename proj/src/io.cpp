#include "crashcert/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crashcert/synthetic.hpp"

namespace crashcert {

using nlohmann::json;

std::string model_to_json(const Network& net) {
    json doc;
    doc["layers"] = json::array();
    for (const Layer& layer : net.layers()) {
        json rows = json::array();
        for (Index i = 0; i < layer.weights.rows(); ++i) {
            json row = json::array();
            for (Index j = 0; j < layer.weights.cols(); ++j) row.push_back(layer.weights(i, j));
            rows.push_back(std::move(row));
        }
        json bias = json::array();
        for (Index i = 0; i < layer.bias.size(); ++i) bias.push_back(layer.bias[i]);
        doc["layers"].push_back({{"weights", std::move(rows)}, {"bias", std::move(bias)},
                                 {"activation", std::string(to_string(layer.activation))}});
    }
    doc["meta"] = {{"format", "crashcert-model"}, {"version", kModelFormatVersion}, {"widths", net.widths()}};
    return doc.dump(1) + "\n";
}

namespace {

double number_at(const json& v, const std::string& where) {
    if (!v.is_number()) throw SchemaError(where + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(where + ": non-finite value");
    return d;
}

const json& array_at(const json& parent, const char* key, const std::string& where) {
    if (!parent.contains(key)) throw SchemaError(where + ": missing field '" + key + "'");
    const json& v = parent.at(key);
    if (!v.is_array() || v.empty()) throw SchemaError(where + "." + key + ": expected a non-empty array");
    return v;
}

} // namespace

Network model_from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("model: invalid JSON at byte ") + std::to_string(e.byte));
    }
    if (!doc.is_object()) throw SchemaError("model: expected a JSON object");
    const json& jl = array_at(doc, "layers", "model");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < jl.size(); ++l) {
        const std::string where = "layers[" + std::to_string(l) + "]";
        const json& layer = jl[l];
        if (!layer.is_object()) throw SchemaError(where + ": expected an object");
        const json& w = array_at(layer, "weights", where);
        const json& b = array_at(layer, "bias", where);
        const auto rows = static_cast<Index>(w.size());
        if (!w[0].is_array() || w[0].empty()) throw SchemaError(where + ".weights[0]: expected a non-empty array");
        const auto cols = static_cast<Index>(w[0].size());
        Layer out{Matrix(rows, cols), Vector(static_cast<Index>(b.size())), Activation::sigmoid};
        for (Index i = 0; i < rows; ++i) {
            const std::string wi = where + ".weights[" + std::to_string(i) + "]";
            const json& row = w[static_cast<std::size_t>(i)];
            if (!row.is_array() || static_cast<Index>(row.size()) != cols)
                throw SchemaError(wi + ": expected " + std::to_string(cols) + " numbers");
            for (Index j = 0; j < cols; ++j)
                out.weights(i, j) = number_at(row[static_cast<std::size_t>(j)], wi + "[" + std::to_string(j) + "]");
        }
        if (static_cast<Index>(b.size()) != rows)
            throw SchemaError(where + ".bias: expected " + std::to_string(rows) + " entries, found " + std::to_string(b.size()));
        for (Index i = 0; i < rows; ++i)
            out.bias[i] = number_at(b[static_cast<std::size_t>(i)], where + ".bias[" + std::to_string(i) + "]");
        if (!layer.contains("activation") || !layer.at("activation").is_string())
            throw SchemaError(where + ".activation: expected a string");
        try {
            out.activation = activation_from_string(layer.at("activation").get<std::string>());
        } catch (const SchemaError& e) {
            throw SchemaError(where + ".activation: " + e.what());
        }
        layers.push_back(std::move(out));
    }
    try {
        return Network(std::move(layers));
    } catch (const std::exception& e) {
        throw SchemaError(std::string("model: ") + e.what());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

void write_model(const Network& net, const std::filesystem::path& path) { write_text_file(path, model_to_json(net)); }

Network read_model(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return model_from_json(text);
    } catch (const SchemaError& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::optional<double> parse_double(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

} // namespace

std::vector<double> parse_double_list(std::string_view text) {
    std::vector<double> out;
    for (std::string_view field : split(text, ',')) {
        const auto v = parse_double(field);
        if (!v) throw SchemaError("'" + std::string(text) + "': '" + std::string(field) + "' is not a number");
        out.push_back(*v);
    }
    return out;
}

Dataset parse_csv_dataset(std::string_view text, std::optional<Index> input_dim, std::string_view source) {
    const std::string src(source);
    std::size_t columns = 0;
    std::size_t line_no = 0;
    bool header = true;
    Dataset data;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string_view> fields = split(line, ',');
        if (header) {
            columns = fields.size();
            if (columns < 2) throw SchemaError(src + ":" + std::to_string(line_no) + ": need at least two columns");
            if (input_dim && (*input_dim < 1 || static_cast<std::size_t>(*input_dim) >= columns))
                throw SchemaError(src + ": " + std::to_string(columns) + " columns cannot hold " +
                                  std::to_string(*input_dim) + " features and a target");
            header = false;
            continue;
        }
        if (fields.size() != columns)
            throw SchemaError(src + ":" + std::to_string(line_no) + ": ragged row, expected " + std::to_string(columns) +
                              " fields, found " + std::to_string(fields.size()));
        const auto n_in = static_cast<Index>(input_dim.value_or(static_cast<Index>(columns) - 1));
        Example ex{Vector(n_in), Vector(static_cast<Index>(columns) - n_in)};
        for (std::size_t c = 0; c < columns; ++c) {
            const auto v = parse_double(fields[c]);
            if (!v || !std::isfinite(*v))
                throw SchemaError(src + ":" + std::to_string(line_no) + ": column " + std::to_string(c + 1) + ": '" +
                                  std::string(fields[c]) + "' is not a finite number");
            const auto ci = static_cast<Index>(c);
            if (ci < n_in)
                ex.x[ci] = *v;
            else
                ex.target[ci - n_in] = *v;
        }
        data.push_back(std::move(ex));
    }
    if (header) throw SchemaError(src + ": missing header row");
    if (data.empty()) throw SchemaError(src + ": no data rows");
    return data;
}

Dataset read_dataset(const std::string& source, std::optional<Index> input_dim) {
    if (source.rfind("synth:", 0) == 0) {
        Dataset d = synth_dataset(parse_synth_spec(source));
        if (input_dim && d.front().x.size() != *input_dim)
            throw SchemaError(source + ": generator has " + std::to_string(d.front().x.size()) + " inputs, model expects " +
                              std::to_string(*input_dim));
        return d;
    }
    return parse_csv_dataset(read_text_file(source), input_dim, source);
}

std::string table_to_csv(const Table& table) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t c = 0; c < table.columns.size(); ++c) os << (c ? "," : "") << table.columns[c];
    os << "\n";
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
        os << "\n";
    }
    return os.str();
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& path, std::string_view document_json,
                                                const std::vector<Table>& tables, ReportFormat format) {
    std::vector<std::filesystem::path> written;
    if (format == ReportFormat::json) {
        write_text_file(path, document_json);
        written.push_back(path);
        return written;
    }
    std::filesystem::path doc = path;
    doc.replace_extension(".json");
    write_text_file(doc, document_json);
    written.push_back(doc);
    for (const Table& t : tables) {
        std::filesystem::path p = path;
        p.replace_filename(path.stem().string() + "." + t.name + ".csv");
        write_text_file(p, table_to_csv(t));
        written.push_back(p);
    }
    return written;
}

} // namespace crashcert
