"""Multi-spectral neural attenuation fields for sparse pushbroom X-ray views."""
