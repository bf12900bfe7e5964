#include <gtest/gtest.h>

#include <cmath>

#include "amsq/units.hpp"

using namespace amsq;

TEST(Units, ParsesSiSuffixes) {
    EXPECT_DOUBLE_EQ(*parse_si_value("10k"), 1e4);
    EXPECT_DOUBLE_EQ(*parse_si_value("1pF"), 1e-12);
    EXPECT_DOUBLE_EQ(*parse_si_value("2.2meg"), 2.2e6);
    EXPECT_DOUBLE_EQ(*parse_si_value("3MEG"), 3e6);
    EXPECT_DOUBLE_EQ(*parse_si_value("5m"), 5e-3);
    EXPECT_DOUBLE_EQ(*parse_si_value("10kohm"), 1e4);
    EXPECT_DOUBLE_EQ(*parse_si_value("-1.5u"), -1.5e-6);
    EXPECT_DOUBLE_EQ(*parse_si_value("1e-9"), 1e-9);
    EXPECT_DOUBLE_EQ(*parse_si_value("4g"), 4e9);
    EXPECT_DOUBLE_EQ(*parse_si_value("7f"), 7e-15);
}

TEST(Units, RejectsGarbage) {
    EXPECT_FALSE(parse_si_value(""));
    EXPECT_FALSE(parse_si_value("abc"));
    EXPECT_FALSE(parse_si_value("1e400"));
    EXPECT_FALSE(parse_si_value("nan"));
    EXPECT_FALSE(parse_si_value("1k2"));
}

TEST(Units, FormatRoundTrips) {
    for (double v : {0.0, 1.0, 0.1, 1e-15, 123456.789, -2.5e-7, 1.0 / 3.0}) {
        EXPECT_EQ(*parse_si_value(format_number(v)), v) << format_number(v);
    }
}
