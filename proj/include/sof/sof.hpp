#pragma once

#include "sof/cloudhub/http_api.hpp"
#include "sof/cloudhub/hub.hpp"
#include "sof/cloudhub/node_link.hpp"
#include "sof/cloudhub/policy.hpp"
#include "sof/cloudhub/service.hpp"
#include "sof/edgenode/link.hpp"
#include "sof/edgenode/node.hpp"
#include "sof/edgenode/snapshot.hpp"
#include "sof/facecore/alignment.hpp"
#include "sof/facecore/embedder.hpp"
#include "sof/facecore/gallery.hpp"
#include "sof/harness/corpus.hpp"
#include "sof/harness/render.hpp"
#include "sof/harness/scenario.hpp"
#include "sof/social/corpus.hpp"
#include "sof/social/graph.hpp"
#include "sof/social/ingest.hpp"
#include "sof/trainer/eval.hpp"
#include "sof/trainer/train.hpp"
#include "sof/trainer/triplet.hpp"
#include "sof/wire/protocol.hpp"
#include "sof/wire/tcp.hpp"
