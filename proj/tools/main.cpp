#include <exception>
#include <iostream>

#include "drflow/cli_io.hpp"
#include "drflow/errors.hpp"

int main(int argc, char** argv) {
  drflow::ParseResult pr = drflow::parse_cli(argc, argv);
  if (pr.exit_code >= 0) return pr.exit_code;
  try {
    const std::vector<std::string> files = drflow::run_cli(pr.options);
    std::cout << "wrote " << files.size() << " files to " << pr.options.out_dir << "\n";
    return 0;
  } catch (const drflow::config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const drflow::infeasible_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const drflow::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
