#include "stereoscale/config.hpp"

#include "stereoscale/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace stereoscale
{
namespace
{
std::string trim(const std::string& s)
{
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string::npos)
        {
                return {};
        }
        const auto last = s.find_last_not_of(" \t\r");
        return s.substr(first, last - first + 1);
}

template <typename T>
T parse_integer(const std::string& text, const std::string& key, const std::string& origin)
{
        T value{};
        const auto* end = text.data() + text.size();
        const auto [ptr, ec] = std::from_chars(text.data(), end, value);
        if (ec != std::errc{} || ptr != end)
        {
                throw ConfigError(origin + ": " + key + " = '" + text + "' is not an integer");
        }
        return value;
}
}

std::string format_number(double x)
{
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return buf;
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin)
{
        KeyValues kv;
        kv.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line))
        {
                ++line_no;
                if (const auto hash = line.find('#'); hash != std::string::npos)
                {
                        line.erase(hash);
                }
                line = trim(line);
                if (line.empty())
                {
                        continue;
                }
                const auto eq = line.find('=');
                if (eq == std::string::npos)
                {
                        throw ConfigError(origin + " line " + std::to_string(line_no) + ": expected key = value");
                }
                const std::string key = trim(line.substr(0, eq));
                if (key.empty())
                {
                        throw ConfigError(origin + " line " + std::to_string(line_no) + ": empty key");
                }
                if (kv.has(key))
                {
                        throw ConfigError(origin + " line " + std::to_string(line_no) + ": duplicate key " + key);
                }
                kv.entries_.emplace_back(key, trim(line.substr(eq + 1)));
        }
        return kv;
}

bool KeyValues::has(const std::string& key) const
{
        return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

void KeyValues::set(const std::string& key, const std::string& value)
{
        for (auto& e : entries_)
        {
                if (e.first == key)
                {
                        e.second = value;
                        return;
                }
        }
        entries_.emplace_back(key, value);
}

const std::string& KeyValues::get(const std::string& key) const
{
        for (const auto& e : entries_)
        {
                if (e.first == key)
                {
                        return e.second;
                }
        }
        throw ConfigError(origin_ + ": missing key " + key);
}

double KeyValues::get_double(const std::string& key) const
{
        const std::string& text = get(key);
        try
        {
                std::size_t used = 0;
                const double value = std::stod(text, &used);
                if (used == text.size())
                {
                        return value;
                }
        }
        catch (const std::exception&)
        {
        }
        throw ConfigError(origin_ + ": " + key + " = '" + text + "' is not a number");
}

int KeyValues::get_int(const std::string& key) const
{
        return parse_integer<int>(get(key), key, origin_);
}

std::uint64_t KeyValues::get_u64(const std::string& key) const
{
        return parse_integer<std::uint64_t>(get(key), key, origin_);
}

bool KeyValues::get_bool(const std::string& key) const
{
        const std::string& text = get(key);
        if (text == "true" || text == "1")
        {
                return true;
        }
        if (text == "false" || text == "0")
        {
                return false;
        }
        throw ConfigError(origin_ + ": " + key + " = '" + text + "' is not a boolean");
}

std::string KeyValues::to_string(const std::string& sep) const
{
        std::string out;
        for (const auto& [key, value] : entries_)
        {
                out += key + sep + value + "\n";
        }
        return out;
}
}
