#include "stereoscale/io.hpp"

#include "stereoscale/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stereoscale
{
std::string read_file(const std::filesystem::path& path)
{
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
                throw IoError("cannot open " + path.string());
        }
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes)
{
        std::filesystem::path tmp = path;
        tmp += ".tmp";
        {
                std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
                if (!out)
                {
                        throw IoError("cannot write " + tmp.string());
                }
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec)
        {
                throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
        }
}

std::string content_hash(std::string_view bytes)
{
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : bytes)
        {
                h ^= c;
                h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
}

std::string file_hash(const std::filesystem::path& path)
{
        return content_hash(read_file(path));
}
}
