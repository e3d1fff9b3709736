#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vitlab {

// Flat key/value configuration with dotted section names. Lines are
// `section.key = value`; '#' starts a comment. Environment variables override
// file values: VITLAB_TRAIN_EPOCHS=3 overrides `train.epochs`.
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);  // file + env overrides

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void apply_env_overrides(const char** environ_like = nullptr);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
    std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace vitlab
