#include <gtest/gtest.h>

#include "hand3d/gradcheck_suite.hpp"

namespace hand3d::gradcheck {
namespace {

TEST(GradcheckSuite, EveryComponentPassesForEveryArchitecture) {
  for (models::Arch arch : {models::Arch::PosePrior, models::Arch::PosePriorDirect, models::Arch::GestureNet}) {
    SuiteOptions o;
    o.arch = arch;
    o.seed = 3;
    const auto results = run_suite(o);
    EXPECT_TRUE(all_pass(results)) << format_report(results);
    EXPECT_EQ(results.size(), 12u);
  }
}

TEST(GradcheckSuite, CorruptedGradientsAreCaught) {
  SuiteOptions o;
  o.corrupt = 1e-3;
  const auto results = run_suite(o);
  EXPECT_FALSE(all_pass(results));
  for (const auto& r : results) {
    if (r.name != "argmax") {
      EXPECT_FALSE(r.pass()) << r.name;
    }
  }
}

TEST(GradcheckSuite, ReportIsReproducible) {
  SuiteOptions o;
  o.seed = 17;
  EXPECT_EQ(format_report(run_suite(o)), format_report(run_suite(o)));
}

}  // namespace
}  // namespace hand3d::gradcheck
