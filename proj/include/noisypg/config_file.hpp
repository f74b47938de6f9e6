#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace noisypg {

// Plain-text experiment configuration: `key = value` lines grouped by
// [section] headers, `#` comments. Keys are addressed as "section.key".
// Every key must be consumed by a typed getter; leftovers are reported as
// unknown keys so misspelled settings fail loudly instead of silently
// falling back to defaults.
class ConfigFile {
  public:
    static ConfigFile parse(const std::string& text) {
        ConfigFile config;
        std::string section;
        std::size_t line_no = 0;
        std::istringstream in(text);
        for (std::string line; std::getline(in, line);) {
            ++line_no;
            const std::string stripped = strip(strip_comment(line));
            if (stripped.empty()) continue;
            if (stripped.front() == '[') {
                if (stripped.back() != ']')
                    throw std::invalid_argument(where(line_no) + "unterminated section header");
                section = strip(stripped.substr(1, stripped.size() - 2));
                if (section.empty())
                    throw std::invalid_argument(where(line_no) + "empty section name");
                continue;
            }
            const std::size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument(where(line_no) + "expected 'key = value'");
            const std::string key = strip(stripped.substr(0, eq));
            const std::string value = strip(stripped.substr(eq + 1));
            if (key.empty()) throw std::invalid_argument(where(line_no) + "empty key");
            const std::string full = section.empty() ? key : section + "." + key;
            if (config.entries_.count(full))
                throw std::invalid_argument(where(line_no) + "duplicate key '" + full + "'");
            config.entries_[full] = Entry{value, line_no, false};
        }
        return config;
    }

    static ConfigFile load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path.string());
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return parse(buffer.str());
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_string(const std::string& key) { return take(key).value; }
    std::string get_string_or(const std::string& key, const std::string& fallback) {
        return has(key) ? get_string(key) : fallback;
    }

    double get_real(const std::string& key) {
        const Entry entry = take(key);
        return parse_real(entry.value, key, entry.line);
    }
    double get_real_or(const std::string& key, double fallback) {
        return has(key) ? get_real(key) : fallback;
    }

    std::int64_t get_integer(const std::string& key) {
        const Entry entry = take(key);
        return parse_integer(entry.value, key, entry.line);
    }
    std::int64_t get_integer_or(const std::string& key, std::int64_t fallback) {
        return has(key) ? get_integer(key) : fallback;
    }

    bool get_bool(const std::string& key) {
        const Entry entry = take(key);
        if (entry.value == "true" || entry.value == "yes" || entry.value == "1") return true;
        if (entry.value == "false" || entry.value == "no" || entry.value == "0") return false;
        throw std::invalid_argument(where(entry.line) + "key '" + key +
                                    "' expects a boolean, got '" + entry.value + "'");
    }
    bool get_bool_or(const std::string& key, bool fallback) {
        return has(key) ? get_bool(key) : fallback;
    }

    std::vector<double> get_real_list(const std::string& key) {
        const Entry entry = take(key);
        std::vector<double> out;
        for (const std::string& tok : tokens(entry.value))
            out.push_back(parse_real(tok, key, entry.line));
        if (out.empty())
            throw std::invalid_argument(where(entry.line) + "key '" + key + "' expects a list");
        return out;
    }

    std::vector<std::int64_t> get_integer_list(const std::string& key) {
        const Entry entry = take(key);
        std::vector<std::int64_t> out;
        for (const std::string& tok : tokens(entry.value))
            out.push_back(parse_integer(tok, key, entry.line));
        if (out.empty())
            throw std::invalid_argument(where(entry.line) + "key '" + key + "' expects a list");
        return out;
    }

    // Call after reading everything the consumer understands; any key left
    // over is unknown by definition.
    void require_all_consumed() const {
        std::string unknown;
        for (const auto& [key, entry] : entries_) {
            if (entry.consumed) continue;
            if (!unknown.empty()) unknown += ", ";
            unknown += "'" + key + "' (line " + std::to_string(entry.line) + ")";
        }
        if (!unknown.empty()) throw std::invalid_argument("unknown config keys: " + unknown);
    }

  private:
    struct Entry {
        std::string value;
        std::size_t line = 0;
        bool consumed = false;
    };

    static std::string where(std::size_t line) {
        return "config line " + std::to_string(line) + ": ";
    }

    static std::string strip(const std::string& s) {
        std::size_t begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) return "";
        std::size_t end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    }

    // A '#' starts a comment when it opens the line or follows whitespace.
    static std::string strip_comment(const std::string& s) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] != '#') continue;
            if (i == 0 || s[i - 1] == ' ' || s[i - 1] == '\t') return s.substr(0, i);
        }
        return s;
    }

    static std::vector<std::string> tokens(const std::string& value) {
        std::vector<std::string> out;
        std::string current;
        for (char c : value) {
            if (c == ',' || c == ' ' || c == '\t') {
                if (!current.empty()) out.push_back(std::move(current));
                current.clear();
            } else {
                current += c;
            }
        }
        if (!current.empty()) out.push_back(std::move(current));
        return out;
    }

    static double parse_real(const std::string& text, const std::string& key, std::size_t line) {
        double v = 0.0;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size())
            throw std::invalid_argument(where(line) + "key '" + key + "' expects a number, got '" +
                                        text + "'");
        return v;
    }

    static std::int64_t parse_integer(const std::string& text, const std::string& key,
                                      std::size_t line) {
        std::int64_t v = 0;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size())
            throw std::invalid_argument(where(line) + "key '" + key +
                                        "' expects an integer, got '" + text + "'");
        return v;
    }

    Entry take(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw std::invalid_argument("missing config key '" + key + "'");
        it->second.consumed = true;
        return it->second;
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace noisypg
