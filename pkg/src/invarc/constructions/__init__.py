from .base import FieldModel, rollout_model
from .algebraic import (
    ComField,
    LorentzField,
    PsdField,
    SimplexField,
    StoichField,
    com_field_eval,
    lorentz_project,
    psd_field_eval,
    psd_reconstruct,
    simplex_embed,
    simplex_field_eval,
    stoich_field_eval,
)
from .energetic import (
    KNOWN_GRADIENTS,
    FirstIntegralModel,
    GenericModel,
    KnownIntegral,
    PoissonModel,
    PortHamiltonianModel,
    first_integral_field,
    generic_latent_field,
    induced_poisson_matrix,
    ph_latent_field,
    poisson_latent_field,
    poisson_physical_field,
)

__all__ = [
    "FieldModel",
    "rollout_model",
    "SimplexField",
    "LorentzField",
    "PsdField",
    "ComField",
    "StoichField",
    "simplex_embed",
    "simplex_field_eval",
    "lorentz_project",
    "psd_field_eval",
    "psd_reconstruct",
    "com_field_eval",
    "stoich_field_eval",
    "PoissonModel",
    "PortHamiltonianModel",
    "GenericModel",
    "FirstIntegralModel",
    "KnownIntegral",
    "KNOWN_GRADIENTS",
    "poisson_latent_field",
    "poisson_physical_field",
    "induced_poisson_matrix",
    "ph_latent_field",
    "generic_latent_field",
    "first_integral_field",
]
