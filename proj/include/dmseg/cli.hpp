#pragma once

namespace dmseg::cli {

int run(int argc, char** argv);

}  // namespace dmseg::cli
