// Generates the shipped LDPC fixture: PEG graph, message bits moved to the
// first k columns, written as alist.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "akb/baseline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Progressive-edge-growth LDPC generator"};
  int n = 1536, k = 1024, degree = 0;
  std::uint64_t seed = akb::classic::shipped_seed;
  std::string out;
  app.add_option("--n", n, "codeword bits");
  app.add_option("--k", k, "message bits");
  app.add_option("--degree", degree, "regular variable degree (default: shipped profile)");
  app.add_option("--seed", seed, "tie-break seed");
  app.add_option("--out", out, "output alist path")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<int> degrees = degree > 0 ? std::vector<int>(static_cast<std::size_t>(n), degree)
                                          : akb::classic::shipped_degrees();
    if (degrees.size() != static_cast<std::size_t>(n)) {
      std::cerr << "shipped profile is for n = " << degrees.size() << "; pass --degree\n";
      return 2;
    }
    const auto code = akb::classic::systematic_first(akb::classic::peg_construct(n, n - k, degrees, seed));
    if (code.k != k) {
      std::cerr << "rank deficient: k = " << code.k << " instead of " << k << "; try another seed\n";
      return 1;
    }
    std::ofstream f(out, std::ios::binary);
    f << akb::classic::to_alist(code);
    if (!f) {
      std::cerr << "cannot write " << out << "\n";
      return 1;
    }
    std::cout << "wrote " << out << " (n=" << code.n << ", k=" << code.k << ", seed=" << seed << ")\n";
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
