#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dfinger/dsp/wav.hpp"
#include "dfinger/error.hpp"
#include "test_util.hpp"

using namespace dfinger;

TEST_CASE("wav float32 and pcm16 round trips") {
  auto dir = std::filesystem::temp_directory_path() / "dfinger_wav_test";
  std::filesystem::create_directories(dir);
  auto a = dfinger::testing::WhiteNoise(1000, 3, 0.2);
  WriteWav((dir / "f.wav").string(), a, WavFormat::kFloat32);
  auto f = ReadWav((dir / "f.wav").string());
  CHECK(f.sample_rate == 24000);
  REQUIRE(f.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(f.samples[i] == static_cast<float>(a.samples[i]));
  WriteWav((dir / "p.wav").string(), a, WavFormat::kPcm16);
  auto p = ReadWav((dir / "p.wav").string());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(p.samples[i] - a.samples[i]) < 0.5 / 32768.0 + 1e-12);
}

TEST_CASE("multichannel wav is rejected") {
  auto path = std::filesystem::temp_directory_path() / "dfinger_stereo.wav";
  auto a = dfinger::testing::WhiteNoise(10, 3, 0.2);
  WriteWav(path.string(), a, WavFormat::kPcm16);
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(22);
  const char two[2] = {2, 0};
  f.write(two, 2);
  f.close();
  try {
    ReadWav(path.string());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIo);
    CHECK(std::string(e.what()).find("mono") != std::string::npos);
  }
}

TEST_CASE("missing wav file is an io error") {
  CHECK_THROWS_AS(ReadWav("/nonexistent/x.wav"), Error);
}
