#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <string_view>

namespace gatedcot {

inline constexpr const char* kSchemaVersion = "1";

enum class DocumentKind { Trace, Cassette, Report, Manifest, Script };

const char* to_string(DocumentKind kind);
/// Throws UnknownSchemaVersion for names outside the enum.
DocumentKind document_kind_from_string(std::string_view name);

// Envelope persisted for every artifact. content_hash is the sha256 of the
// canonical bytes of {kind, payload, schema_version}.
struct StoredDocument {
  std::string schema_version = kSchemaVersion;
  DocumentKind kind = DocumentKind::Trace;
  std::string content_hash;
  nlohmann::json payload;

  bool operator==(const StoredDocument&) const = default;
};

/// Compact dump with sorted keys; byte-stable for equal values.
std::string canonical_bytes(const nlohmann::json& value);

/// Envelope with its hash filled in.
StoredDocument seal(DocumentKind kind, nlohmann::json payload);

/// The full on-disk text of a document (canonical, newline-terminated).
std::string serialize_document(const StoredDocument& doc);

/// Parses and verifies serialized text. Throws HashMismatch when the bytes
/// are not exactly the canonical form of a document whose hash verifies,
/// and UnknownSchemaVersion for versions other than kSchemaVersion.
StoredDocument parse_document(std::string_view text);

/// Writes `<prefix>-<kind>-<hash12>.json` (or `<kind>-<hash12>.json`
/// without a prefix) atomically through a private temp file and rename.
/// Throws IoError.
std::filesystem::path write_document(const StoredDocument& doc,
                                     const std::filesystem::path& dir,
                                     std::string_view prefix = {});

/// Atomic write of `doc` to exactly `path`. Throws IoError.
void write_document_to(const StoredDocument& doc,
                       const std::filesystem::path& path);

/// Throws IoError, HashMismatch, UnknownSchemaVersion.
StoredDocument read_document(const std::filesystem::path& path);

/// Like read_document but also checks the kind. Throws HashMismatch when
/// the kind differs.
StoredDocument read_document(const std::filesystem::path& path,
                             DocumentKind expected);

}  // namespace gatedcot
