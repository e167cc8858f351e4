#pragma once

#include <stdexcept>
#include <string>

namespace kml {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define KML_DEFINE_ERROR(Name)                                                 \
    struct Name : Error {                                                      \
        explicit Name(const std::string& msg) : Error(#Name ": " + msg) {}     \
    }

// graph store
KML_DEFINE_ERROR(SchemaViolation);
KML_DEFINE_ERROR(UnknownEntity);
KML_DEFINE_ERROR(UnknownRelation);
KML_DEFINE_ERROR(DuplicateEntity);
KML_DEFINE_ERROR(IncompatiblePath);
KML_DEFINE_ERROR(NotFrequencyWeighted);
KML_DEFINE_ERROR(NoTails);
KML_DEFINE_ERROR(FrozenGraph);
KML_DEFINE_ERROR(EmptyGraph);

// neural core
KML_DEFINE_ERROR(NonUnitInput);
KML_DEFINE_ERROR(DegenerateOutput);
KML_DEFINE_ERROR(MissingForwardCache);
KML_DEFINE_ERROR(ShapeMismatch);
KML_DEFINE_ERROR(EmptyPositiveSet);
KML_DEFINE_ERROR(MissingModule);
KML_DEFINE_ERROR(UnknownCategory);
KML_DEFINE_ERROR(DimensionMismatch);

// qa generation
KML_DEFINE_ERROR(UnknownTemplate);
KML_DEFINE_ERROR(NoRealizableGrounding);
KML_DEFINE_ERROR(InsufficientVocabulary);
KML_DEFINE_ERROR(SpecTooSmall);

// program engine / logic / theory
KML_DEFINE_ERROR(NoProgramAvailable);
KML_DEFINE_ERROR(MissingOptionEmbedding);
KML_DEFINE_ERROR(MixedOptionSources);
KML_DEFINE_ERROR(EmptyOracleSet);
KML_DEFINE_ERROR(NoDefinedSamples);
KML_DEFINE_ERROR(IdealUndefined);

// io
KML_DEFINE_ERROR(IoError);
KML_DEFINE_ERROR(BadCheckpoint);
KML_DEFINE_ERROR(BadConfig);

#undef KML_DEFINE_ERROR

} // namespace kml
