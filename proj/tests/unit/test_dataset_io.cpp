#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "unlearn/datagen.hpp"
#include "unlearn/dataset_io.hpp"

using namespace unlearn;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "unlearn_tests";
  fs::create_directories(dir);
  return dir / name;
}

Dataset sample() {
  DataGenSpec s;
  s.n = 17;
  s.p = 5;
  s.link = link_kind::linear_gaussian;
  s.seed = 3;
  return generate_dataset(s);
}

}  // namespace

TEST(DatasetIo, CsvRoundTripIsExact) {
  const Dataset d = sample();
  const auto path = temp_path("d.csv");
  io::write_dataset(d, path);
  std::ifstream is(path);
  std::string schema, header;
  std::getline(is, schema);
  std::getline(is, header);
  EXPECT_EQ(schema, "# schema=v1");
  EXPECT_EQ(header, "y,x1,x2,x3,x4,x5");
  const Dataset back = io::read_dataset(path);
  EXPECT_EQ(back.X, d.X);
  EXPECT_EQ(back.y, d.y);
}

TEST(DatasetIo, CsvWithoutSchemaLineIsAccepted) {
  const auto path = temp_path("plain.csv");
  {
    std::ofstream os(path);
    os << "y,x1,x2\n1,0.5,-0.5\n0,0.25,2\n";
  }
  const Dataset d = io::read_dataset(path);
  EXPECT_EQ(d.n(), 2u);
  EXPECT_EQ(d.X(1, 1), 2.0);

  const auto bad = temp_path("v9.csv");
  {
    std::ofstream os(bad);
    os << "# schema=v9\ny,x1\n1,2\n";
  }
  EXPECT_THROW(io::read_dataset(bad), schema_error);
}

TEST(DatasetIo, BinaryRoundTripKeepsBetaStar) {
  const Dataset d = sample();
  const auto path = temp_path("d.bin");
  io::write_dataset(d, path);
  EXPECT_EQ(fs::file_size(path), 8u + 4u + 4u + 8u + 8u + 8u * (17u + 17u * 5u + 5u));
  const Dataset back = io::read_dataset(path);
  EXPECT_EQ(back.X, d.X);
  EXPECT_EQ(back.y, d.y);
  ASSERT_TRUE(back.beta_star.has_value());
  EXPECT_EQ(*back.beta_star, *d.beta_star);
}

TEST(DatasetIo, BinaryLayoutIsColumnMajor) {
  Dataset d;
  d.X.resize(2, 2);
  d.X << 1.0, 2.0, 3.0, 4.0;
  d.y = Eigen::Vector2d(5.0, 6.0);
  const auto path = temp_path("layout.bin");
  io::write_binary(d, path);
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  EXPECT_EQ(std::string(magic, 7), "UNLRNDS");
  is.seekg(32);
  double v[6];
  is.read(reinterpret_cast<char*>(v), sizeof(v));
  EXPECT_EQ(v[0], 5.0);
  EXPECT_EQ(v[1], 6.0);
  EXPECT_EQ(v[2], 1.0);
  EXPECT_EQ(v[3], 3.0);
  EXPECT_EQ(v[4], 2.0);
  EXPECT_EQ(v[5], 4.0);
}

TEST(DatasetIo, Errors) {
  EXPECT_THROW(io::read_dataset(temp_path("missing.bin")), io_error);
  const auto bad = temp_path("bad.bin");
  {
    std::ofstream os(bad, std::ios::binary);
    os << "NOTADATASETFILE-----------------------";
  }
  EXPECT_THROW(io::read_dataset(bad), schema_error);
  const auto badcsv = temp_path("bad.csv");
  {
    std::ofstream os(badcsv);
    os << "y,x1\n1,2,3\n";
  }
  EXPECT_THROW(io::read_dataset(badcsv), schema_error);
}

TEST(DatasetIo, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) EXPECT_EQ(io::parse_double(io::format_double(v)), v);
}

TEST(Dataset, RowsAndWithout) {
  const Dataset d = sample();
  const Dataset r = d.rows({2, 5});
  EXPECT_EQ(r.n(), 2u);
  EXPECT_EQ(r.X.row(1), d.X.row(5));
  const Dataset w = d.without({0, 16});
  EXPECT_EQ(w.n(), 15u);
  EXPECT_EQ(w.X.row(0), d.X.row(1));
  EXPECT_THROW(d.rows({17}), std::out_of_range);
  EXPECT_NEAR(d.gamma(), 17.0 / 5.0, 1e-15);
}

TEST(Dataset, Validation) {
  Dataset d = sample();
  d.y.resize(3);
  EXPECT_THROW(d.validate(), std::invalid_argument);
  Dataset e = sample();
  e.X(0, 0) = NAN;
  EXPECT_THROW(e.validate(), std::invalid_argument);
  Dataset f = sample();
  f.y[0] = 0.5;
  EXPECT_THROW(f.validate_for(LossSpec{loss_family::logistic}), domain_error);
}
