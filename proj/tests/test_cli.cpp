#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

#ifndef CVME_CLI_PATH
#error "CVME_CLI_PATH must be defined to the built cli binary"
#endif

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(CVME_CLI_PATH) + " " + args;
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("cli: schema prints and exits zero") {
  CHECK(run_cli("--print-config-schema > /dev/null") == 0);
}

TEST_CASE("cli: generate then estimate is byte-identical across invocations") {
  std::string cfg = temp_path("cvme_cli.ini");
  std::ofstream(cfg) << "[scenario]\nn = 400\nseed = 7\n"
                        "[estimate]\nestimators = cv naive\n";
  std::string data = temp_path("cvme_cli_data.csv");
  std::string out1 = temp_path("cvme_cli_out1.csv");
  std::string out2 = temp_path("cvme_cli_out2.csv");

  REQUIRE(run_cli("generate --config " + cfg + " --out " + data) == 0);
  CHECK(std::filesystem::exists(data));
  REQUIRE(run_cli("estimate " + data + " --config " + cfg + " --out " + out1) == 0);
  REQUIRE(run_cli("estimate " + data + " --config " + cfg + " --out " + out2) == 0);
  std::string a = slurp(out1);
  CHECK(a == slurp(out2));
  CHECK(a.find("estimator,") == 0);
  CHECK(a.find("cv,") != std::string::npos);

  // --seed on the command line changes the generated data
  std::string data2 = temp_path("cvme_cli_data2.csv");
  REQUIRE(run_cli("generate --config " + cfg + " --seed 8 --out " + data2) == 0);
  CHECK(slurp(data) != slurp(data2));

  for (const auto& p : {cfg, data, data2, out1, out2}) std::filesystem::remove(p);
}

TEST_CASE("cli: malformed dataset exits with the parse status") {
  std::string bad = temp_path("cvme_cli_bad.csv");
  std::ofstream(bad) << "y,a_star,s,a,x1\n1.0,7,1,1,0.5\n";
  CHECK(run_cli("estimate " + bad + " 2> /dev/null") == 2);
  std::filesystem::remove(bad);
}

TEST_CASE("cli: bad config exits with the config status") {
  std::string cfg = temp_path("cvme_cli_badcfg.ini");
  std::ofstream(cfg) << "[scenario]\nwhoops = 1\n";
  std::string out = temp_path("cvme_cli_badcfg_out.csv");
  CHECK(run_cli("generate --config " + cfg + " --out " + out + " 2> /dev/null") == 4);
  std::filesystem::remove(cfg);
}
