#include "vitlab/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

extern "C" char** environ;

namespace vitlab {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string env_name(const std::string& key) {
    std::string out = "VITLAB_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
        cfg.kv_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    Config cfg = parse(ss.str());
    cfg.apply_env_overrides();
    return cfg;
}

void Config::apply_env_overrides(const char** environ_like) {
    // override any known key present in the environment; also accept new keys
    // introduced purely via environment variables
    for (auto& [key, value] : kv_) {
        const char* v = std::getenv(env_name(key).c_str());
        if (v) value = v;
    }
    const char** env = environ_like ? environ_like : const_cast<const char**>(environ);
    for (const char** e = env; *e != nullptr; ++e) {
        const std::string entry = *e;
        if (entry.rfind("VITLAB_", 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key;
        for (char c : entry.substr(7, eq - 7)) key += c == '_' ? '.' : static_cast<char>(std::tolower(c));
        kv_[key] = entry.substr(eq + 1);
    }
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("config: missing required key '" + key + "'");
    return it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' is not a number: '" + it->second + "'");
    }
}

long long Config::get_int(const std::string& key, long long fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stoll(it->second);
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' is not an integer: '" + it->second + "'");
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config: key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<double> Config::get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) continue;
        out.push_back(std::stod(trim(item)));
    }
    return out;
}

std::vector<std::size_t> Config::get_sizes(const std::string& key, std::vector<std::size_t> fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<std::size_t> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stoull(trim(item))));
    }
    return out;
}

}  // namespace vitlab
