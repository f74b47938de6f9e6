#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

namespace noisypg {

// Rectangular report data with a fixed, typed schema. Serialization uses
// shortest-round-trip number formatting so CSV -> table -> CSV is
// byte-identical, which keeps re-run outputs diff-able.

enum class ColumnType { string, integer, real };

using Cell = std::variant<std::string, std::int64_t, double>;

struct ColumnSpec {
    std::string name;
    ColumnType type;
};

namespace detail {

inline std::string format_real(double value) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

inline std::string format_integer(std::int64_t value) {
    char buf[24];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

inline bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\n\r") != std::string::npos;
}

inline std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace detail

class ReportTable {
  public:
    explicit ReportTable(std::vector<ColumnSpec> schema) : schema_(std::move(schema)) {
        if (schema_.empty()) throw std::invalid_argument("ReportTable: schema must be non-empty");
        for (const auto& col : schema_) {
            if (col.name.empty() || detail::needs_quoting(col.name))
                throw std::invalid_argument("ReportTable: column names must be plain words");
        }
    }

    const std::vector<ColumnSpec>& schema() const noexcept { return schema_; }
    std::size_t num_rows() const noexcept { return rows_.size(); }
    const std::vector<std::vector<Cell>>& rows() const noexcept { return rows_; }

    std::size_t column_index(const std::string& name) const {
        for (std::size_t i = 0; i < schema_.size(); ++i)
            if (schema_[i].name == name) return i;
        throw std::invalid_argument("ReportTable: no column named '" + name + "'");
    }

    void append_row(std::vector<Cell> row) {
        if (row.size() != schema_.size())
            throw std::invalid_argument("ReportTable: row arity does not match schema");
        for (std::size_t i = 0; i < row.size(); ++i) {
            const bool ok = (schema_[i].type == ColumnType::string &&
                             std::holds_alternative<std::string>(row[i])) ||
                            (schema_[i].type == ColumnType::integer &&
                             std::holds_alternative<std::int64_t>(row[i])) ||
                            (schema_[i].type == ColumnType::real &&
                             std::holds_alternative<double>(row[i]));
            if (!ok)
                throw std::invalid_argument("ReportTable: cell type mismatch in column '" +
                                            schema_[i].name + "'");
            if (schema_[i].type == ColumnType::real && !std::isfinite(std::get<double>(row[i])))
                throw std::invalid_argument("ReportTable: non-finite value in column '" +
                                            schema_[i].name + "'");
        }
        rows_.push_back(std::move(row));
    }

    const std::string& text_at(std::size_t row, const std::string& column) const {
        return std::get<std::string>(rows_.at(row).at(column_index(column)));
    }
    std::int64_t integer_at(std::size_t row, const std::string& column) const {
        return std::get<std::int64_t>(rows_.at(row).at(column_index(column)));
    }
    double real_at(std::size_t row, const std::string& column) const {
        return std::get<double>(rows_.at(row).at(column_index(column)));
    }

    std::string to_csv() const {
        std::string out;
        for (std::size_t i = 0; i < schema_.size(); ++i) {
            if (i) out += ',';
            out += schema_[i].name;
        }
        out += '\n';
        for (const auto& row : rows_) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out += ',';
                switch (schema_[i].type) {
                    case ColumnType::string: {
                        const auto& s = std::get<std::string>(row[i]);
                        out += detail::needs_quoting(s) ? detail::quote(s) : s;
                        break;
                    }
                    case ColumnType::integer:
                        out += detail::format_integer(std::get<std::int64_t>(row[i]));
                        break;
                    case ColumnType::real:
                        out += detail::format_real(std::get<double>(row[i]));
                        break;
                }
            }
            out += '\n';
        }
        return out;
    }

    static ReportTable from_csv(const std::string& text, std::vector<ColumnSpec> schema) {
        ReportTable table(std::move(schema));
        const std::vector<std::vector<std::string>> records = split_records(text);
        if (records.empty()) throw std::invalid_argument("ReportTable: missing header row");
        const auto& header = records.front();
        if (header.size() != table.schema_.size())
            throw std::invalid_argument("ReportTable: header arity does not match schema");
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] != table.schema_[i].name)
                throw std::invalid_argument("ReportTable: header column '" + header[i] +
                                            "' does not match schema '" + table.schema_[i].name +
                                            "'");
        for (std::size_t r = 1; r < records.size(); ++r) {
            const auto& fields = records[r];
            if (fields.size() != table.schema_.size())
                throw std::invalid_argument("ReportTable: row arity does not match schema");
            std::vector<Cell> row;
            row.reserve(fields.size());
            for (std::size_t i = 0; i < fields.size(); ++i) {
                switch (table.schema_[i].type) {
                    case ColumnType::string: row.emplace_back(fields[i]); break;
                    case ColumnType::integer: {
                        std::int64_t v = 0;
                        const auto res =
                            std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
                        if (res.ec != std::errc() || res.ptr != fields[i].data() + fields[i].size())
                            throw std::invalid_argument("ReportTable: bad integer '" + fields[i] +
                                                        "'");
                        row.emplace_back(v);
                        break;
                    }
                    case ColumnType::real: {
                        double v = 0.0;
                        const auto res =
                            std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
                        if (res.ec != std::errc() || res.ptr != fields[i].data() + fields[i].size())
                            throw std::invalid_argument("ReportTable: bad real '" + fields[i] + "'");
                        row.emplace_back(v);
                        break;
                    }
                }
            }
            table.append_row(std::move(row));
        }
        return table;
    }

  private:
    // Splits CSV text into records of raw fields, honoring quoted fields
    // (including embedded commas, quotes, and newlines).
    static std::vector<std::vector<std::string>> split_records(const std::string& text) {
        std::vector<std::vector<std::string>> records;
        std::vector<std::string> fields;
        std::string field;
        bool in_quotes = false, field_started = false;
        for (std::size_t i = 0; i < text.size(); ++i) {
            const char c = text[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < text.size() && text[i + 1] == '"') {
                        field += '"';
                        ++i;
                    } else {
                        in_quotes = false;
                    }
                } else {
                    field += c;
                }
                continue;
            }
            switch (c) {
                case '"': in_quotes = true; field_started = true; break;
                case ',':
                    fields.push_back(std::move(field));
                    field.clear();
                    field_started = true;
                    break;
                case '\n':
                    if (field_started || !field.empty() || !fields.empty()) {
                        fields.push_back(std::move(field));
                        field.clear();
                        records.push_back(std::move(fields));
                        fields.clear();
                        field_started = false;
                    }
                    break;
                case '\r': break;  // tolerate CRLF input; output is LF-only
                default: field += c; field_started = true; break;
            }
        }
        if (in_quotes) throw std::invalid_argument("ReportTable: unterminated quoted field");
        if (field_started || !field.empty() || !fields.empty()) {
            fields.push_back(std::move(field));
            records.push_back(std::move(fields));
        }
        return records;
    }

    std::vector<ColumnSpec> schema_;
    std::vector<std::vector<Cell>> rows_;
};

}  // namespace noisypg
