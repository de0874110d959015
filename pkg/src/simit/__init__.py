"""Unpaired label-to-image translation guided by simulated images."""
