#include "gatedcot/tracestore.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <sstream>
#include <system_error>

#include "gatedcot/digest.hpp"
#include "gatedcot/error.hpp"

namespace gatedcot {

using nlohmann::json;

const char* to_string(DocumentKind kind) {
  switch (kind) {
    case DocumentKind::Trace:
      return "trace";
    case DocumentKind::Cassette:
      return "cassette";
    case DocumentKind::Report:
      return "report";
    case DocumentKind::Manifest:
      return "manifest";
    case DocumentKind::Script:
      return "script";
  }
  return "unknown";
}

DocumentKind document_kind_from_string(std::string_view name) {
  for (auto kind : {DocumentKind::Trace, DocumentKind::Cassette,
                    DocumentKind::Report, DocumentKind::Manifest,
                    DocumentKind::Script}) {
    if (name == to_string(kind)) return kind;
  }
  throw UnknownSchemaVersion("unknown document kind '" + std::string(name) +
                             "'");
}

std::string canonical_bytes(const json& value) {
  // nlohmann objects are std::map backed, so dump() emits sorted keys and
  // shortest round-trip number text.
  return value.dump(-1, ' ', false, json::error_handler_t::strict);
}

namespace {

std::string content_hash(const std::string& schema_version, DocumentKind kind,
                         const json& payload) {
  const json body = {{"kind", to_string(kind)},
                     {"payload", payload},
                     {"schema_version", schema_version}};
  return sha256_hex(canonical_bytes(body));
}

json envelope(const StoredDocument& doc) {
  return {{"schema_version", doc.schema_version},
          {"kind", to_string(doc.kind)},
          {"content_hash", doc.content_hash},
          {"payload", doc.payload}};
}

std::filesystem::path temp_path_for(const std::filesystem::path& target) {
  static std::atomic<unsigned long> counter{0};
  std::ostringstream name;
  name << '.' << target.filename().string() << '.' << ::getpid() << '.'
       << counter.fetch_add(1) << ".tmp";
  return target.parent_path() / name.str();
}

}  // namespace

StoredDocument seal(DocumentKind kind, json payload) {
  StoredDocument doc;
  doc.kind = kind;
  doc.payload = std::move(payload);
  doc.content_hash = content_hash(doc.schema_version, kind, doc.payload);
  return doc;
}

std::string serialize_document(const StoredDocument& doc) {
  return canonical_bytes(envelope(doc)) + "\n";
}

StoredDocument parse_document(std::string_view text) {
  const json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw HashMismatch("document is not valid JSON");
  }
  const auto version = parsed.find("schema_version");
  if (version == parsed.end() || !version->is_string()) {
    throw HashMismatch("document has no schema_version");
  }
  if (version->get<std::string>() != kSchemaVersion) {
    throw UnknownSchemaVersion("schema version '" +
                               version->get<std::string>() +
                               "' is not supported (expected " +
                               kSchemaVersion + ")");
  }
  StoredDocument doc;
  try {
    doc.schema_version = version->get<std::string>();
    doc.kind = document_kind_from_string(parsed.at("kind").get<std::string>());
    doc.content_hash = parsed.at("content_hash").get<std::string>();
    doc.payload = parsed.at("payload");
  } catch (const json::exception& e) {
    throw HashMismatch(std::string("malformed document envelope: ") + e.what());
  } catch (const UnknownSchemaVersion& e) {
    throw HashMismatch(e.what());
  }
  if (serialize_document(doc) != text) {
    throw HashMismatch("document bytes are not in canonical form");
  }
  const std::string expected =
      content_hash(doc.schema_version, doc.kind, doc.payload);
  if (expected != doc.content_hash) {
    throw HashMismatch("content hash " + doc.content_hash +
                       " does not match " + expected);
  }
  return doc;
}

void write_document_to(const StoredDocument& doc,
                       const std::filesystem::path& path) {
  const std::string bytes = serialize_document(doc);
  const auto temp = temp_path_for(path);
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + temp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(temp, ignored);
      throw IoError("write failed for " + temp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(temp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(temp, ignored);
    throw IoError("cannot move document into place at " + path.string() +
                  ": " + ec.message());
  }
}

std::filesystem::path write_document(const StoredDocument& doc,
                                     const std::filesystem::path& dir,
                                     std::string_view prefix) {
  std::string name;
  if (!prefix.empty()) name = std::string(prefix) + "-";
  name += to_string(doc.kind);
  name += "-" + doc.content_hash.substr(0, 12) + ".json";
  const auto path = dir / name;
  write_document_to(doc, path);
  return path;
}

StoredDocument read_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  try {
    return parse_document(buffer.str());
  } catch (const HashMismatch& e) {
    throw HashMismatch(path.string() + ": " + e.what());
  } catch (const UnknownSchemaVersion& e) {
    throw UnknownSchemaVersion(path.string() + ": " + e.what());
  }
}

StoredDocument read_document(const std::filesystem::path& path,
                             DocumentKind expected) {
  StoredDocument doc = read_document(path);
  if (doc.kind != expected) {
    throw HashMismatch(path.string() + ": expected a " + to_string(expected) +
                       " document, found " + to_string(doc.kind));
  }
  return doc;
}

}  // namespace gatedcot
