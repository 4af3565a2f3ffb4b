#include "featlab/io.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "featlab/errors.hpp"
#include "featlab/rng.hpp"

namespace featlab {

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

std::string RunManifest::hash() const {
  nlohmann::json core = {{"command", command},
                         {"config", config},
                         {"seed", seed},
                         {"tool_version", kToolVersion},
                         {"prng", std::string(kPrngId)}};
  return sha256_hex(core.dump()).substr(0, 16);
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},         {"config", config},
          {"input", input},             {"output_dir", output_dir},
          {"seed", seed},               {"tool_version", kToolVersion},
          {"prng", std::string(kPrngId)}, {"wall_seconds", wall_seconds},
          {"hash", hash()}};
}

std::filesystem::path resolve_output_dir(const std::string& explicit_dir, const std::string& name) {
  std::filesystem::path dir;
  if (!explicit_dir.empty())
    dir = explicit_dir;
  else if (const char* root = std::getenv(kOutputRootEnv); root && *root)
    dir = std::filesystem::path(root) / name;
  else
    dir = std::filesystem::path("out") / name;
  std::filesystem::create_directories(dir);
  return dir;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path,
                const std::string& header_comment) {
  std::ofstream f(path);
  require(bool(f), "cannot open " + path.string());
  if (!header_comment.empty()) f << "# " << header_comment << '\n';
  f << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(bool(f), "cannot open " + path.string());
  std::stringstream body;
  std::string line;
  bool in_header = true;
  while (std::getline(f, line)) {
    if (in_header && !line.empty() && line[0] == '#') continue;
    in_header = false;
    body << line << '\n';
  }
  try {
    return nlohmann::json::parse(body.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

}  // namespace featlab
