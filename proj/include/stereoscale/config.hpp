#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace stereoscale
{
// Ordered `key = value` text with `#` comments. Used for config files, manifest echoes and
// checkpoint metadata.
class KeyValues
{
public:
        static KeyValues parse(const std::string& text, const std::string& origin = "config");

        bool has(const std::string& key) const;
        void set(const std::string& key, const std::string& value);

        const std::string& get(const std::string& key) const;
        double get_double(const std::string& key) const;
        int get_int(const std::string& key) const;
        std::uint64_t get_u64(const std::string& key) const;
        bool get_bool(const std::string& key) const;

        const std::vector<std::pair<std::string, std::string>>& entries() const
        {
                return entries_;
        }

        // `sep` is " = " for config files, "=" for checkpoint metadata.
        std::string to_string(const std::string& sep = " = ") const;

private:
        std::string origin_ = "config";
        std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_number(double x);
}
