#include <gtest/gtest.h>

#include <thread>

#include "sof/wire/protocol.hpp"
#include "sof/wire/tcp.hpp"
#include "support.hpp"

using namespace sof;
using namespace sof::wire;
using sof::testing::code_of;

namespace {

Message round_trip(const Message& m) {
  const auto line = encode(m);
  EXPECT_EQ(line.back(), '\n');
  EXPECT_EQ(line.find('\n'), line.size() - 1);
  return decode(line);
}

edgenode::PhotoSeries sample_series() {
  edgenode::PhotoSeries s;
  s.series_id = "node-1-0001";
  s.node_id = "node-1";
  s.first_seen = 1000;
  for (int k = 0; k < 3; ++k) {
    const auto face = sof::testing::render_face("stranger", k);
    s.chips.push_back(quantize(facecore::align_face(face.image, face.landmarks, 32)));
    s.chip_times.push_back(1000 + 500 * k);
  }
  return s;
}

}  // namespace

TEST(Wire, HelloPingPongRoundTrip) {
  auto h = round_trip({1, Hello{"node-7", 3}});
  EXPECT_EQ(h.seq, 1u);
  ASSERT_TRUE(std::holds_alternative<Hello>(h.payload));
  EXPECT_EQ(std::get<Hello>(h.payload).node_id, "node-7");
  EXPECT_EQ(std::get<Hello>(h.payload).model_version, 3u);
  EXPECT_TRUE(std::holds_alternative<Ping>(round_trip({2, Ping{}}).payload));
  EXPECT_TRUE(std::holds_alternative<Pong>(round_trip({3, Pong{}}).payload));
}

TEST(Wire, RecognitionEventRoundTrip) {
  edgenode::AccessDecision d{edgenode::Outcome::Granted, "alice", 0.75, 0.275, 4, "front_door", "node-1", 12345};
  const auto m = round_trip({9, RecognitionEvent{d}});
  EXPECT_EQ(std::get<RecognitionEvent>(m.payload).decision, d);
  d.person.reset();
  d.outcome = edgenode::Outcome::DeniedUnknown;
  EXPECT_EQ(std::get<RecognitionEvent>(round_trip({10, RecognitionEvent{d}}).payload).decision, d);
}

TEST(Wire, EscalationCarriesChipsExactly) {
  const auto s = sample_series();
  const auto m = round_trip({4, EscalationMsg{s}});
  EXPECT_EQ(std::get<EscalationMsg>(m.payload).series, s);
}

TEST(Wire, ModelUpdateRoundTrip) {
  const auto params = facecore::EmbedderParams::random({16, 1, 8, 4}, 3);
  auto snap = std::make_shared<edgenode::ModelSnapshot>();
  snap->version = 2;
  snap->params = params;
  snap->created_at = 77;
  snap->devices["stove"] = {"Stove", 2, true};
  const auto m = round_trip({5, ModelUpdate{snap}});
  const auto& got = *std::get<ModelUpdate>(m.payload).snapshot;
  EXPECT_EQ(got.version, 2u);
  EXPECT_EQ(got.params.w1, params.w1);
  EXPECT_EQ(got.params.b2, params.b2);
  EXPECT_EQ(got.devices.at("stove").min_level, 2);
}

TEST(Wire, MalformedInputIsProtocolError) {
  EXPECT_EQ(code_of([] { decode("{not json"); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { decode("[1,2]"); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { decode(R"({"proto":"sof-wire/2","seq":1,"type":"PING"})"); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { decode(R"({"proto":"sof-wire/1","type":"PING"})"); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { decode(R"({"proto":"sof-wire/1","seq":-1,"type":"PING"})"); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { decode(R"({"proto":"sof-wire/1","seq":1,"type":"HUG"})"); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { decode(R"({"proto":"sof-wire/1","seq":1,"type":"HELLO"})"); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { decode(R"({"proto":"sof-wire/1","seq":1,"type":"MODEL_UPDATE","snapshot":{"version":0}})"); }),
            ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([] { encode({1, ModelUpdate{}}); }), ErrorCode::ProtocolError);
}

TEST(Wire, SequenceMustIncrease) {
  Sequencer out;
  SeqTracker in;
  for (int k = 0; k < 5; ++k) in.accept(decode(out.encode_next(Ping{})));
  EXPECT_EQ(code_of([&] { in.accept({5, Ping{}}); }), ErrorCode::ProtocolError);
  EXPECT_EQ(code_of([&] { in.accept({2, Ping{}}); }), ErrorCode::ProtocolError);
  in.accept({8, Ping{}});  // gaps are allowed
}

TEST(Tcp, LinesCrossLoopback) {
  auto listener = listen_tcp("127.0.0.1", 0);
  const auto port = local_port(listener);
  std::thread server([&] {
    auto conn = accept_tcp(listener, 5000);
    ASSERT_TRUE(conn.has_value());
    LineStream s(std::move(*conn));
    for (;;) {
      auto line = s.read_line(5000);
      ASSERT_TRUE(line.has_value());
      if (*line == "bye") break;
      s.send(*line + "!\n");
    }
  });
  LineStream client(connect_tcp("127.0.0.1", port));
  client.send("one\ntwo\n");
  EXPECT_EQ(client.read_line(5000), "one!");
  EXPECT_EQ(client.read_line(5000), "two!");
  const std::string big(200000, 'x');
  client.send(big + "\n");
  EXPECT_EQ(client.read_line(5000), big + "!");
  EXPECT_EQ(client.read_line(10), std::nullopt);
  client.send("bye\n");
  server.join();
  EXPECT_EQ(code_of([&] { (void)client.read_line(5000); }), ErrorCode::IoFailure);
}

TEST(Tcp, ConnectRefusedIsUnreachable) {
  std::uint16_t port;
  {
    auto l = listen_tcp("127.0.0.1", 0);
    port = local_port(l);
  }
  EXPECT_EQ(code_of([&] { connect_tcp("127.0.0.1", port); }), ErrorCode::ServerUnreachable);
}
