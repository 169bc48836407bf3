#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "adapam/checkpoint.hpp"
#include "adapam/episode.hpp"
#include "support.hpp"

using namespace adapam;
using namespace adapam::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("adapam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Network net = Network::create(small_spec(5, 3), 77);
  net.params.at(0).data[0] = -0.0;
  net.params.at(0).data[1] = 1e-310;  // subnormal survives
  std::string bytes = encode_checkpoint(net.params, {{"note", "x"}});
  DecodedCheckpoint d = decode_checkpoint(bytes);
  EXPECT_EQ(d.params, net.params);
  EXPECT_TRUE(std::signbit(d.params.at(0).data[0]));
  EXPECT_EQ(d.meta.at("note"), "x");
  EXPECT_EQ(encode_checkpoint(d.params, d.meta), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
  Network net = Network::create(small_spec(4, 2), 1);
  std::string bytes = encode_checkpoint(net.params);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IntegrityError);
  EXPECT_THROW(decode_checkpoint(bytes + "z"), IntegrityError);
  EXPECT_THROW(decode_checkpoint("no newline"), IntegrityError);
  EXPECT_THROW(decode_checkpoint("{\"format\":\"other\"}\n"), IntegrityError);
}

TEST(Checkpoint, NetworkGroupVerifiesHashes) {
  fs::path dir = scratch_dir("group");
  std::vector<Network> nets{Network::create(small_spec(3, 2), 1), Network::create(small_spec(3, 2), 2)};
  fs::path manifest = save_network_group(dir, "team", nets, {{"k", 1}});
  NetworkGroup g = load_network_group(manifest);
  ASSERT_EQ(g.nets.size(), 2u);
  EXPECT_EQ(g.nets[1], nets[1]);
  EXPECT_EQ(g.meta.at("k"), 1);

  std::string bytes = read_file(dir / "team_1.ckpt");
  bytes[bytes.size() - 1] ^= 0x01;
  write_file(dir / "team_1.ckpt", bytes);
  EXPECT_THROW(load_network_group(manifest), IntegrityError);
  fs::remove_all(dir);
}

TEST(Checkpoint, SingleNetworkSaveLoad) {
  fs::path dir = scratch_dir("single");
  Network net = Network::create(MlpSpec{{4, 6, 6, 2}, Activation::relu}, 9);
  save_network(dir / "n.ckpt", net);
  EXPECT_EQ(load_network(dir / "n.ckpt"), net);
  EXPECT_THROW(read_file(dir / "missing.ckpt"), Error);
  fs::remove_all(dir);
}

TEST(EpisodeLog, JsonLinesRoundTrip) {
  EpisodeLog ep;
  ep.seed = 123456789012345ull;
  ep.win = false;
  StepRecord s;
  s.t = 0;
  s.state = {0.25, -1.0};
  s.observations = {{0.1, 0.2}, {0.3, 0.4}};
  s.actions = {2, 0};
  s.active = {true, false};
  s.reward = -0.75;
  AttackNote a;
  a.agent = 0;
  a.malicious_action = 4;
  a.perturbed_obs = Vec{0.05, 0.2};
  a.linf = 0.05;
  a.l2 = 0.05;
  a.success_proxy = true;
  s.attacks.push_back(a);
  ep.steps = {s, s};
  ep.steps[1].t = 1;
  ep.steps[1].attacks.clear();
  ep.total_reward = -1.5;

  std::stringstream ss;
  write_episode_jsonl(ss, ep, 0);
  write_episode_jsonl(ss, ep, 1);
  auto back = read_episodes_jsonl(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], ep);
  EXPECT_EQ(back[1], ep);

  std::stringstream truncated;
  write_episode_jsonl(truncated, ep, 0);
  std::string text = truncated.str();
  text = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  std::stringstream in(text);
  EXPECT_THROW(read_episodes_jsonl(in), IntegrityError);
}
